import numpy as np
import pytest

from canardlab.exceptions import DomainException, JetShapeException
from canardlab.jets import MultiJet, TaylorJet, exp, log, sin, sqrt, tanh


def test_chain_rule():
    t = TaylorJet.variable(0.0, 3)
    result = exp(sin(t))
    print(f"{result = }")
    # d^k/dt^k exp(sin(t)) at 0
    assert np.allclose(result.derivatives(), [1.0, 1.0, 1.0, 0.0])


def test_geometric_series():
    t = TaylorJet.variable(0.0, 4)
    result = 1.0 / (1.0 - t)
    assert np.allclose(result.coefficients, [1.0] * 5)


def test_log_series():
    t = TaylorJet.variable(0.0, 4)
    result = log(1.0 + t)
    assert np.allclose(result.coefficients, [0.0, 1.0, -1.0 / 2.0, 1.0 / 3.0, -1.0 / 4.0])


def test_tanh_derivatives():
    result = tanh(TaylorJet.variable(0.0, 3))
    assert np.allclose(result.derivatives(), [0.0, 1.0, 0.0, -2.0])


def test_sqrt_derivatives():
    result = sqrt(TaylorJet.variable(4.0, 2))
    # 2, 1/4, -1/32
    assert np.allclose(result.derivatives(), [2.0, 0.25, -1.0 / 32.0])


def test_batched_coefficients():
    x = TaylorJet.variable(np.array([0.0, 1.0, 2.0]), 2)
    result = x * x
    assert np.allclose(result.coefficients[0], [0.0, 1.0, 4.0])
    assert np.allclose(result.coefficients[1], [0.0, 2.0, 4.0])
    assert np.allclose(result.coefficients[2], 1.0)


def test_multijet_gradient_and_hessian():
    x, y = MultiJet.seed([1.5, -0.5], order=2)
    result = x**2 * y
    print(f"{result = }")
    assert np.isclose(result.value, 1.5**2 * -0.5)
    assert np.allclose(result.gradient, [2.0 * 1.5 * -0.5, 1.5**2])
    assert np.allclose(result.hessian, [[-1.0, 3.0], [3.0, 0.0]])


def test_multijet_of_taylor_jets():
    t = TaylorJet.variable(0.5, 2)
    (x,) = MultiJet.seed([t], order=1)
    result = x * x
    # value t^2 and d/dx = 2t, both as series in t
    assert result.depth == 2
    assert np.allclose(result.value.derivatives(), [0.25, 1.0, 2.0])
    assert np.allclose(result.gradient[0].derivatives(), [1.0, 2.0, 0.0])


def test_mixed_shapes_raise():
    with pytest.raises(JetShapeException):
        TaylorJet.variable(1.0, 2) + TaylorJet.variable(1.0, 3)

    a = MultiJet.seed([1.0, 2.0])[0]
    b = MultiJet.seed([1.0, 2.0, 3.0])[0]
    with pytest.raises(JetShapeException):
        a * b

    order_one = MultiJet.seed([1.0, 2.0], order=1)[0]
    order_two = MultiJet.seed([1.0, 2.0], order=2)[0]
    with pytest.raises(JetShapeException):
        order_one - order_two


def test_domain_errors():
    with pytest.raises(DomainException):
        1.0 / TaylorJet.variable(0.0, 2)

    with pytest.raises(DomainException):
        sqrt(TaylorJet.variable(0.0, 2))

    with pytest.raises(DomainException):
        MultiJet.seed([0.0])[0].reciprocal()

    with pytest.raises(DomainException):
        log(-1.0)


def test_seed_order():
    with pytest.raises(ValueError):
        MultiJet.seed([1.0], order=3)
