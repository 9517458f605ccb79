import numpy as np
import pytest

from canardlab import expr as ex
from canardlab.exceptions import (
    DomainException,
    ExpressionSyntaxException,
    UnboundNameException,
    UnknownFunctionException,
)
from canardlab.jets import MultiJet, TaylorJet

CORPUS = [
    "z^3/3 - z",
    "c1*u^3 + c2*u",
    "-x^2",
    "(a - b) - (c - d)",
    "a / (b * c)",
    "2^3^2",
    "-(x + y)*alpha",
    "sin(x)*cos(y) + exp(-x^2/2)",
    "sqrt(abs(x - y)) + tanh(2.5e-1*x)",
    "ln(1 + x^2) - 1.5",
    "x^-2",
    "x^0.5",
]


def test_parse_cubic():
    node = ex.parse("z^3/3 - z", variables=["z"])
    print(f"{node = }")
    assert node == ex.BinaryOp(
        "-",
        ex.BinaryOp("/", ex.BinaryOp("^", ex.Variable("z"), ex.Constant(3.0)), ex.Constant(3.0)),
        ex.Variable("z"),
    )
    assert np.isclose(ex.eval_real(node, {"z": 1.0}), -2.0 / 3.0)


def test_parse_single_name():
    assert ex.parse("x", variables=["x"]) == ex.Variable("x")
    assert ex.parse("x") == ex.Parameter("x")


def test_parameters_and_variables():
    node = ex.parse("c1*u^3 + c2*u", variables=["u"])
    assert ex.names(node) == {"c1", "c2", "u"}

    value = ex.eval_real(node, {"u": 0.782622, "c1": 0.393781, "c2": -0.72357})
    print(f"{value = }")
    assert np.isclose(value, -0.377515, atol=1e-5)


def test_zero_bindings():
    node = ex.parse("a*x^2 + x*y - 3*y^3", variables=["x", "y"])
    assert ex.eval_real(node, {"a": 1.7, "x": 0.0, "y": 0.0}) == 0.0


def test_precedence():
    bindings = {"x": 3.0, "a": 2.0, "b": 3.0, "c": 2.0}
    assert ex.eval_real(ex.parse("-x^2"), bindings) == -9.0
    assert np.isclose(ex.eval_real(ex.parse("a^b^c"), bindings), 2.0**9)
    assert ex.eval_real(ex.parse("a - b - c"), bindings) == -3.0
    assert ex.eval_real(ex.parse("a / b * c"), bindings) == 2.0 / 3.0 * 2.0
    assert ex.eval_real(ex.parse("--a"), bindings) == 2.0


def test_round_trip():
    rng = np.random.default_rng(1)
    for source in CORPUS:
        node = ex.parse(source, variables=["x", "y", "z", "u"])
        printed = ex.to_source(node)
        reparsed = ex.parse(printed, variables=["x", "y", "z", "u"])
        print(f"{source = } {printed = }")
        assert reparsed == node

        bindings = {name: float(v) for name, v in zip(sorted(ex.names(node)), rng.uniform(0.5, 2.0, size=8))}
        assert ex.eval_real(reparsed, bindings) == ex.eval_real(node, bindings)


def test_syntax_errors():
    with pytest.raises(ExpressionSyntaxException) as exc_info:
        ex.parse("x + * y")
    print(f"{exc_info.value = }")
    assert exc_info.value.line == 1
    assert exc_info.value.column == 5

    with pytest.raises(ExpressionSyntaxException) as exc_info:
        ex.parse("x +\n  (y")
    assert exc_info.value.line == 2

    with pytest.raises(ExpressionSyntaxException) as exc_info:
        ex.parse("x $ y")
    assert exc_info.value.column == 3

    for source in ["", "   ", "x y", "(x", "x)", "3 +"]:
        with pytest.raises(ExpressionSyntaxException):
            ex.parse(source)


def test_unknown_function():
    with pytest.raises(UnknownFunctionException) as exc_info:
        ex.parse("1 + foo(x)")
    assert exc_info.value.column == 5
    assert isinstance(exc_info.value, ExpressionSyntaxException)


def test_unbound_name():
    node = ex.parse("alpha*(x + y)", variables=["x", "y"])
    with pytest.raises(UnboundNameException):
        ex.eval_real(node, {"x": 1.0, "y": 2.0})


def test_domain_errors():
    for source, bindings in [
        ("ln(x)", {"x": 0.0}),
        ("ln(x)", {"x": -1.0}),
        ("1/x", {"x": 0.0}),
        ("sqrt(x)", {"x": -4.0}),
        ("x^-1", {"x": 0.0}),
        ("exp(x)", {"x": 1e4}),
    ]:
        with pytest.raises(DomainException):
            ex.eval_real(ex.parse(source, variables=["x"]), bindings)


def test_eval_over_arrays():
    node = ex.parse("z^3/3 - z", variables=["z"])
    z = np.linspace(-2.0, 2.0, 7)
    assert np.allclose(ex.evaluate(node, {"z": z}), z**3 / 3 - z)


def test_large_integer_power():
    node = ex.parse("x^1000000000", variables=["x"])
    assert ex.eval_real(node, {"x": 1.0}) == 1.0
    assert ex.eval_real(node, {"x": -1.0}) == 1.0
    assert ex.eval_real(node, {"x": 0.5}) == 0.0

    # d/dx x^n = n at x = 1, exact in floating point
    result = ex.eval_jet(node, {"x": TaylorJet.variable(1.0, 1)})
    assert result.coefficients[1] == 1e9

    for n in [2, 5, 13, -3]:
        value = ex.eval_real(ex.parse(f"x^{n}", variables=["x"]), {"x": 1.1})
        assert np.isclose(value, 1.1**n, rtol=1e-14)


def test_eval_jet_square():
    node = ex.parse("x^2", variables=["x"])
    result = ex.eval_jet(node, {"x": TaylorJet.variable(3.0, 2)})
    print(f"{result = }")
    assert result.value == 9.0
    assert result.coefficients[1] == 6.0
    # halved coefficients: c_2 = x''/2
    assert result.coefficients[2] == 1.0
    assert result.derivatives() == [9.0, 6.0, 2.0]


def test_eval_jet_constant():
    result = ex.eval_jet(ex.parse("2.5 * 4"), {"x": TaylorJet.variable(1.0, 3)})
    assert isinstance(result, TaylorJet)
    assert result.coefficients == (10.0, 0.0, 0.0, 0.0)


def test_eval_jet_sin():
    result = ex.eval_jet(ex.parse("sin(x)", variables=["x"]), {"x": TaylorJet.variable(0.0, 1)})
    assert result.value == 0.0
    assert result.coefficients[1] == 1.0


def test_jet_against_finite_differences():
    rng = np.random.default_rng(7)
    sources = [
        "3*x^3 - 2*x*y + y^2",
        "x^4*y - 5*y^3 + 7",
        "(x - y)^3 / 4 + x*y^2",
        "exp(x/3)*sin(y) + ln(2 + x^2)",
    ]
    for source in sources:
        node = ex.parse(source, variables=["x", "y"])
        for _ in range(5):
            x, y = rng.uniform(-1.5, 1.5, size=2)
            jets = MultiJet.seed([x, y], order=1)
            result = ex.eval_jet(node, {"x": jets[0], "y": jets[1]})

            h = 1e-6
            fd = [
                (ex.eval_real(node, {"x": x + h, "y": y}) - ex.eval_real(node, {"x": x - h, "y": y})) / (2 * h),
                (ex.eval_real(node, {"x": x, "y": y + h}) - ex.eval_real(node, {"x": x, "y": y - h})) / (2 * h),
            ]
            print(f"{source = } {result.gradient = } {fd = }")
            assert np.allclose(result.gradient, fd, rtol=1e-6, atol=1e-7)
