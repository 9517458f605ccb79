"""
Derivatives of vector fields through jets and closed-form eigenanalysis of 2x2 and 3x3 matrices.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional, Protocol, Sequence

import numpy as np

from canardlab.jets import MultiJet, TaylorJet

logger = logging.getLogger(__name__)

MAX_JET_ORDER = 6

# relative threshold for treating eigenvalues as zero or real
SPECTRUM_RTOL = 1e-9


class VectorFieldEval(Protocol):
    """Anything that maps a point (a sequence of numbers, arrays or jets) to a sequence of the same kind"""

    def __call__(self, point: Sequence[Any]) -> Sequence[Any]: ...


def _series_coefficient(component: Any, j: int):
    if isinstance(component, TaylorJet):
        return component.coefficients[j]
    # components that do not depend on the state come back as plain constants
    return component if j == 0 else 0.0


def trajectory_jets(field: VectorFieldEval, point: Sequence, k: int) -> list[list]:
    """
    Time derivatives ``[X, X', ..., X^(k)]`` of the solution of ``X' = field(X)`` through ``point``.

    Uses the Taylor recurrence: the coefficient ``c_{j+1}`` of the state series is the ``j``-th
    coefficient of ``field`` applied to the partial series ``c_0 .. c_j``, divided by ``j + 1``.
    The entries of ``point`` may themselves be jets, in which case derivatives of the result
    with respect to the point are carried along.

    Args:
        field (VectorFieldEval): The vector field.
        point (Sequence): Where to expand.
        k (int): Highest derivative order, ``1 <= k <= 6``.

    Returns:
        list[list]: ``k + 1`` vectors; entry ``j`` is ``c_j * j!``.
    """
    if not 1 <= k <= MAX_JET_ORDER:
        raise ValueError(f"Derivative order must be in [1, {MAX_JET_ORDER}], got {k}")

    n = len(point)
    series = [[p] for p in point]

    for j in range(k):
        state = [TaylorJet(s) for s in series]
        values = field(state)
        if len(values) != n:
            raise ValueError(
                f"Field returned {len(values)} components for a point of dimension {n}"
            )
        for i in range(n):
            series[i].append(_series_coefficient(values[i], j) / (j + 1))

    return [
        [series[i][j] * float(math.factorial(j)) for i in range(n)]
        for j in range(k + 1)
    ]


def _batch_shape(point: Sequence) -> tuple:
    return np.broadcast_shapes(*(np.shape(p) for p in point))


def jacobian(field: VectorFieldEval, point: Sequence) -> np.ndarray:
    """
    Exact Jacobian ``J[i, j] = dF_i / dx_j`` by first-order multivariate jets.

    The map may be rectangular (m outputs, n inputs). When the entries of ``point`` are arrays of a
    common shape ``B`` the Jacobians of all points are returned at once with shape ``(m, n) + B``.
    """
    values = field(MultiJet.seed(list(point), order=1))
    out = np.zeros((len(values), len(point)) + _batch_shape(point))
    for i, v in enumerate(values):
        if isinstance(v, MultiJet):
            for j, d in enumerate(v.gradient):
                out[i, j] = d
    return out


def value_gradient_hessian(
    scalar_fn: Callable[[Sequence], Any], point: Sequence[float]
) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and symmetrized Hessian of ``scalar_fn`` at ``point`` from one second-order jet pass"""
    n = len(point)
    result = scalar_fn(MultiJet.seed([float(p) for p in point], order=2))
    if not isinstance(result, MultiJet):
        return float(result), np.zeros(n), np.zeros((n, n))
    grad = np.array([float(g) for g in result.gradient])
    hess = np.array([[float(h) for h in row] for row in result.hessian])
    return float(result.value), grad, 0.5 * (hess + hess.T)


def gradient(scalar_fn: Callable[[Sequence], Any], point: Sequence[float]) -> np.ndarray:
    return value_gradient_hessian(scalar_fn, point)[1]


def hessian(scalar_fn: Callable[[Sequence], Any], point: Sequence[float]) -> np.ndarray:
    return value_gradient_hessian(scalar_fn, point)[2]


def balance(matrix: np.ndarray, radix: float = 2.0) -> np.ndarray:
    """
    Diagonal similarity scaling with powers of ``radix`` so that row and column norms are comparable.
    Eigenvalues are unchanged.
    """
    a = np.array(matrix, dtype=float)
    n = len(a)
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.sum(np.abs(a[:, i])) - abs(a[i, i])
            r = np.sum(np.abs(a[i, :])) - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            s = c + r
            f = 1.0
            g = r / radix
            while c < g:
                f *= radix
                c *= radix * radix
            g = r * radix
            while c > g:
                f /= radix
                c /= radix * radix
            if (c + r) / f < 0.95 * s:
                done = False
                a[:, i] *= f
                a[i, :] /= f
    return a


def det3(a) -> float:
    """Cofactor expansion of a 3x3 determinant"""
    return (
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    )


def _principal_minor_sum(a) -> float:
    return (
        (a[0][0] * a[1][1] - a[0][1] * a[1][0])
        + (a[0][0] * a[2][2] - a[0][2] * a[2][0])
        + (a[1][1] * a[2][2] - a[1][2] * a[2][1])
    )


def _quadratic_roots(trace: float, det: float) -> list[complex]:
    """Roots of ``l^2 - trace*l + det``"""
    disc = trace * trace - 4.0 * det
    if disc >= 0.0:
        q = 0.5 * (trace + math.copysign(math.sqrt(disc), trace))
        if q == 0.0:
            return [0j, 0j]
        return [complex(q), complex(det / q)]
    im = 0.5 * math.sqrt(-disc)
    return [complex(0.5 * trace, im), complex(0.5 * trace, -im)]


def _polish(root: float, trace: float, s: float, det: float) -> float:
    """A couple of guarded Newton steps on the characteristic cubic"""
    p = lambda x: ((x - trace) * x + s) * x - det  # noqa: E731
    for _ in range(2):
        dp = (3.0 * root - 2.0 * trace) * root + s
        if dp == 0.0:
            break
        candidate = root - p(root) / dp
        if abs(p(candidate)) >= abs(p(root)):
            break
        root = candidate
    return root


def _cubic_roots(trace: float, s: float, det: float) -> list[complex]:
    """Roots of ``l^3 - trace*l^2 + s*l - det``"""
    p = s - trace * trace / 3.0
    q = -2.0 * trace**3 / 27.0 + trace * s / 3.0 - det
    r = 4.0 * p**3 + 27.0 * q * q
    shift = trace / 3.0

    if r < 0.0:
        # three distinct real roots, p < 0
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = min(1.0, max(-1.0, (3.0 * q / (2.0 * p)) * math.sqrt(-3.0 / p)))
        theta = math.acos(arg) / 3.0
        return [
            complex(_polish(m * math.cos(theta - 2.0 * math.pi * k / 3.0) + shift, trace, s, det))
            for k in range(3)
        ]

    sq = math.sqrt(r / 108.0)
    u = np.cbrt(-0.5 * q + sq)
    v = np.cbrt(-0.5 * q - sq)
    root = _polish(float(u + v) + shift, trace, s, det)
    # deflate: (l - root)(l^2 + b l + c)
    b = root - trace
    c = s + root * b
    return [complex(root)] + _quadratic_roots(-b, c)


def eigen_small(matrix) -> list[complex]:
    """
    Eigenvalues of a real 2x2 or 3x3 matrix in closed form, after balancing.

    The cubic is solved with the trigonometric method when it has three distinct real roots and
    with Cardano's formula (followed by deflation) otherwise. Results are sorted by real part
    descending, then imaginary part descending.
    """
    a = np.array(matrix, dtype=float)
    if a.shape not in ((2, 2), (3, 3)):
        raise ValueError(f"eigen_small supports 2x2 and 3x3 matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("eigen_small got a matrix with non-finite entries")

    a = balance(a)
    if len(a) == 2:
        roots = _quadratic_roots(a[0, 0] + a[1, 1], a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
    else:
        roots = _cubic_roots(float(np.trace(a)), _principal_minor_sum(a), det3(a))
    return sorted(roots, key=lambda z: (-z.real, -z.imag))


class EquilibriumType(str, Enum):
    SADDLE = "Saddle"
    DEGENERATE_SADDLE = "DegenerateSaddle"
    NODE = "Node"
    FOCUS = "Focus"
    INDETERMINATE = "Indeterminate"


@dataclass
class SpectrumReport:
    """Jacobian invariants, eigenvalues and the resulting equilibrium type"""

    dimension: int
    delta: float
    trace: float
    eigenvalues: list[complex]
    classification: EquilibriumType
    criterion_label: EquilibriumType
    criterion_agrees: bool
    tolerance: float
    minor_sum: Optional[float] = None
    p: Optional[float] = None
    q: Optional[float] = None
    r: Optional[float] = None


def _label_from_eigenvalues(eigenvalues: list[complex], tol: float) -> EquilibriumType:
    zero = [abs(z) <= tol for z in eigenvalues]
    real = [abs(z.imag) <= tol for z in eigenvalues]

    if any(zero):
        rest = [z for z, is_zero in zip(eigenvalues, zero) if not is_zero]
        if (
            len(eigenvalues) == 3
            and len(rest) == 2
            and all(abs(z.imag) <= tol for z in rest)
            and rest[0].real * rest[1].real < 0
        ):
            return EquilibriumType.DEGENERATE_SADDLE
        return EquilibriumType.INDETERMINATE
    if not all(real):
        return EquilibriumType.FOCUS
    signs = {z.real > 0 for z in eigenvalues}
    return EquilibriumType.SADDLE if len(signs) == 2 else EquilibriumType.NODE


def _label_from_criterion(report: SpectrumReport, norm: float) -> EquilibriumType:
    # tol scales like one eigenvalue; delta is homogeneous of degree n in the matrix
    tol = report.tolerance
    if report.dimension == 2:
        delta, trace = report.delta, report.trace
        if abs(delta) <= tol * (1.0 + norm):
            return EquilibriumType.INDETERMINATE
        if delta < 0.0:
            return EquilibriumType.SADDLE
        if delta < trace * trace / 4.0:
            return EquilibriumType.NODE
        if delta > trace * trace / 4.0:
            return EquilibriumType.FOCUS
        return EquilibriumType.INDETERMINATE

    delta, trace, s, r = report.delta, report.trace, report.minor_sum, report.r
    if abs(delta) <= tol * (1.0 + norm) ** 2:
        return (
            EquilibriumType.DEGENERATE_SADDLE if s < 0.0 else EquilibriumType.INDETERMINATE
        )
    if r < 0.0 and s < trace * trace / 3.0 and delta < 0.0:
        return EquilibriumType.SADDLE
    if r < 0.0 and delta > 0.0:
        return EquilibriumType.NODE
    if r > 0.0:
        return EquilibriumType.FOCUS
    return EquilibriumType.INDETERMINATE


def spectrum_report(matrix) -> SpectrumReport:
    """
    Invariants, eigenvalues and classification of a 2x2 or 3x3 Jacobian.

    The label comes from the sign pattern of the eigenvalues; the label implied by the
    determinant/trace (2D) or discriminant (3D) inequalities is stored as ``criterion_label`` and a
    mismatch is logged.
    """
    a = np.array(matrix, dtype=float)
    n = len(a)
    norm = float(np.linalg.norm(a))
    tol = SPECTRUM_RTOL * (1.0 + norm)
    eigenvalues = eigen_small(a)

    if n == 2:
        delta = float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
        report = SpectrumReport(
            dimension=2,
            delta=delta,
            trace=float(np.trace(a)),
            eigenvalues=eigenvalues,
            classification=_label_from_eigenvalues(eigenvalues, tol),
            criterion_label=EquilibriumType.INDETERMINATE,
            criterion_agrees=True,
            tolerance=tol,
        )
    else:
        trace = float(np.trace(a))
        s = float(_principal_minor_sum(a))
        delta = float(det3(a))
        p = s - trace * trace / 3.0
        q = -2.0 * trace**3 / 27.0 + trace * s / 3.0 - delta
        report = SpectrumReport(
            dimension=3,
            delta=delta,
            trace=trace,
            eigenvalues=eigenvalues,
            classification=_label_from_eigenvalues(eigenvalues, tol),
            criterion_label=EquilibriumType.INDETERMINATE,
            criterion_agrees=True,
            tolerance=tol,
            minor_sum=s,
            p=p,
            q=q,
            r=4.0 * p**3 + 27.0 * q * q,
        )

    report.criterion_label = _label_from_criterion(report, norm)
    report.criterion_agrees = report.criterion_label == report.classification
    if not report.criterion_agrees:
        logger.warning(
            f"Eigenvalue label {report.classification.value} differs from the invariant criterion label {report.criterion_label.value} (eigenvalues {eigenvalues})"
        )
    return report
