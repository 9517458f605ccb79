import numpy as np
import pytest
from conftest import LinearField, distinct_spectrum, equilibrium_eigenvalues_chua3, fd_gradient

from canardlab.diffgeo import (
    EquilibriumType,
    eigen_small,
    gradient,
    hessian,
    jacobian,
    spectrum_report,
    trajectory_jets,
    value_gradient_hessian,
)
from canardlab.slowfast import ChuaParams3, chua3, full_vector_field, normalized_slow_field, reduce


def test_linear_trajectory_jets():
    lam = -0.7
    jets = trajectory_jets(LinearField([[lam]]), [2.0], 3)
    print(f"{jets = }")
    assert np.allclose([j[0] for j in jets], [2.0, 2.0 * lam, 2.0 * lam**2, 2.0 * lam**3])


def test_chua3_reduced_jets():
    field = reduce(chua3(ChuaParams3(alpha=1.0)))
    jets = trajectory_jets(field, [0.0, 2.0], 2)
    print(f"{jets = }")

    assert np.allclose(jets[0], [0.0, 2.0])
    assert np.allclose(jets[1], [-2.0, -2.0])
    assert np.allclose(jets[2], [52.0 / 3.0, 0.0])

    # the acceleration is J F
    J = jacobian(field, [0.0, 2.0])
    assert np.allclose(J @ np.array(jets[1]), jets[2])


def test_jets_vanish_at_equilibrium():
    field = full_vector_field(chua3())
    jets = trajectory_jets(field, [0.0, 0.0, 0.0], 4)
    for j in jets[1:]:
        assert np.allclose(j, 0.0)


def test_order_out_of_range():
    field = LinearField([[1.0]])
    for k in [0, 7]:
        with pytest.raises(ValueError):
            trajectory_jets(field, [1.0], k)


def test_chua3_reduced_jacobian():
    for alpha in [0.25, 1.0, -0.1]:
        J = jacobian(reduce(chua3(ChuaParams3(alpha=alpha))), [1.0, 1.0])
        print(f"{alpha = } {J = }")
        assert np.allclose(J, [[0.0, 10.0 * alpha / 3.0], [1.0, -1.0]])


def test_jacobian_of_linear_field():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    assert np.allclose(jacobian(LinearField(A), [0.3, -1.0, 2.0]), A)


def test_batched_jacobian():
    field = reduce(chua3(ChuaParams3(alpha=0.5)))
    y = np.array([0.0, 1.0, -0.5])
    z = np.array([2.0, 1.0, 0.3])
    J = jacobian(field, [y, z])
    assert J.shape == (2, 2, 3)
    for b in range(3):
        assert np.allclose(J[:, :, b], jacobian(field, [y[b], z[b]]))


def test_normalized_slow_field_jacobian():
    root6 = np.sqrt(6.0)
    for alpha in [0.1, 0.2571389636]:
        J = jacobian(normalized_slow_field(chua3(ChuaParams3(alpha=alpha))), [root6, -root6, -root6])
        print(f"{J = }")
        assert np.allclose(J, [[0.0, -5.0, 5.0], [5.0 * alpha, 5.0 * alpha, 0.0], [0.0, 1.0, -1.0]])


def test_gradient_and_hessian():
    point = [1.5, -0.5]

    value, grad, hess = value_gradient_hessian(lambda p: p[0] ** 2 - p[1] ** 2, point)
    assert np.isclose(value, 2.0)
    assert np.allclose(grad, [3.0, 1.0])
    assert np.allclose(hess, [[2.0, 0.0], [0.0, -2.0]])

    assert np.allclose(gradient(lambda p: p[0] * p[1], point), [-0.5, 1.5])
    assert np.allclose(hessian(lambda p: p[0] * p[1], point), [[0.0, 1.0], [1.0, 0.0]])

    value, grad, hess = value_gradient_hessian(lambda p: 3.0, point)
    assert value == 3.0
    assert np.allclose(grad, 0.0)
    assert np.allclose(hess, 0.0)

    def cubic(p):
        return p[0] ** 3 * p[1] - 2.0 * p[1] ** 2

    assert np.allclose(gradient(cubic, point), fd_gradient(lambda p: cubic([float(v) for v in p]), point), rtol=1e-6)


def _matches(eigenvalues, reference, tol):
    return all(min(abs(z - r) for r in reference) < tol for z in eigenvalues)


def test_eigen_small_examples():
    assert np.allclose(eigen_small([[2.0, 1.0], [0.0, 2.0]]), [2.0, 2.0])
    assert np.allclose(eigen_small([[0.0, 1.0], [-1.0, 0.0]]), [1j, -1j])
    assert np.allclose(eigen_small(np.diag([-1.0, 1.0, 2.0])), [2.0, 1.0, -1.0])
    assert np.allclose(eigen_small([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]), [1j, -1j, -1.0])

    with pytest.raises(ValueError):
        eigen_small(np.eye(4))
    with pytest.raises(ValueError):
        eigen_small([[np.nan, 0.0], [0.0, 1.0]])


def test_eigen_small_random():
    rng = np.random.default_rng(11)
    for n in [2, 3]:
        for _ in range(1000):
            A = rng.normal(size=(n, n))
            norm = np.linalg.norm(A)
            eig = eigen_small(A)
            report = spectrum_report(A)

            # Vieta: trace, sum of principal 2x2 minors and determinant
            assert np.isclose(sum(eig).real, report.trace, rtol=1e-9, atol=1e-9 * norm)
            assert np.isclose(np.prod(eig).real, report.delta, rtol=1e-9, atol=1e-9 * norm**n)
            assert np.isclose(report.delta, np.linalg.det(A), rtol=1e-9, atol=1e-9 * norm**n)
            if n == 3:
                pairs = eig[0] * eig[1] + eig[0] * eig[2] + eig[1] * eig[2]
                assert np.isclose(pairs.real, report.minor_sum, rtol=1e-9, atol=1e-9 * norm**2)
            assert _matches(eig, np.linalg.eigvals(A), 1e-6)

            for lam in eig:
                residual = abs(np.linalg.det(A - lam * np.eye(n)))
                assert residual < 1e-8 * norm**3

            # sorted by real part, descending
            assert all(eig[i].real >= eig[i + 1].real - 1e-12 for i in range(n - 1))


def test_eigen_small_similar_diagonal():
    rng = np.random.default_rng(5)
    for _ in range(20):
        lam = distinct_spectrum(rng, 3)
        P = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
        A = P @ np.diag(lam) @ np.linalg.inv(P)
        assert np.allclose(eigen_small(A), sorted(lam, reverse=True), atol=1e-7)


def test_chua3_equilibrium_spectrum():
    for alpha in [0.05, 0.19, 0.21, 0.4]:
        J = jacobian(normalized_slow_field(chua3(ChuaParams3(alpha=alpha))), [np.sqrt(6.0), -np.sqrt(6.0), -np.sqrt(6.0)])
        eig = eigen_small(J)
        print(f"{alpha = } {eig = }")
        assert _matches(eig, equilibrium_eigenvalues_chua3(alpha), 1e-7)

    def leading_real_part(alpha):
        J = jacobian(normalized_slow_field(chua3(ChuaParams3(alpha=alpha))), [np.sqrt(6.0), -np.sqrt(6.0), -np.sqrt(6.0)])
        return max(z.real for z in eigen_small(J) if abs(z) > 1e-9)

    # the complex pair crosses the imaginary axis at alpha = 1/5
    assert leading_real_part(0.19) < 0.0
    assert leading_real_part(0.21) > 0.0


def test_spectrum_report_2d():
    for matrix, label in [
        ([[1.0, 0.0], [0.0, -2.0]], EquilibriumType.SADDLE),
        ([[-1.0, 0.0], [0.0, -2.0]], EquilibriumType.NODE),
        ([[0.0, 1.0], [-1.0, 0.0]], EquilibriumType.FOCUS),
        ([[0.0, 10.0 / 3.0], [1.0, -1.0]], EquilibriumType.SADDLE),
    ]:
        report = spectrum_report(matrix)
        print(f"{report = }")
        assert report.dimension == 2
        assert report.classification == label
        assert report.criterion_label == label
        assert report.criterion_agrees

    report = spectrum_report([[0.0, 10.0 / 3.0], [1.0, -1.0]])
    assert np.isclose(report.delta, -10.0 / 3.0)
    assert np.isclose(report.trace, -1.0)


def test_spectrum_report_3d():
    for matrix, label in [
        (np.diag([-1.0, 1.0, 2.0]), EquilibriumType.SADDLE),
        (np.diag([1.0, 2.0, 3.0]), EquilibriumType.NODE),
        (np.diag([0.0, 1.0, -1.0]), EquilibriumType.DEGENERATE_SADDLE),
        ([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]], EquilibriumType.FOCUS),
    ]:
        report = spectrum_report(matrix)
        print(f"{report = }")
        assert report.dimension == 3
        assert report.classification == label
        assert report.criterion_agrees

    report = spectrum_report(np.diag([-1.0, 1.0, 2.0]))
    assert np.isclose(report.delta, -2.0)
    assert np.isclose(report.trace, 2.0)
    assert np.isclose(report.minor_sum, -1.0)
    assert report.r < 0.0
