"""
Flow curvature manifold ``phi = det(X', X'', .., X^(n))`` of a vector field and the second
derivative test of ``phi`` at pseudo-singular points.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional, Sequence

import numpy as np

from canardlab.diffgeo import (
    MAX_JET_ORDER,
    SpectrumReport,
    VectorFieldEval,
    det3,
    trajectory_jets,
    value_gradient_hessian,
)
from canardlab.exceptions import EvaluationException
from canardlab.jets import Jet
from canardlab.pseudosing import (
    JacobianVerdict,
    PseudoSingularPoint,
    combine_verdicts,
    reduced_field_at,
    verdict_from_spectrum,
)
from canardlab.slowfast import SlowFastSystem

logger = logging.getLogger(__name__)

DEGENERACY_RTOL = 1e-9
EXTREMUM_RTOL = 1e-6


class HessianClass(str, Enum):
    LOCAL_MIN = "LocalMin"
    LOCAL_MAX = "LocalMax"
    SADDLE = "Saddle"
    DEGENERATE = "Degenerate"


class CurvatureVerdict(str, Enum):
    CANARD_BY_CURVATURE_SADDLE = "CanardByCurvatureSaddle"
    NO_CANARD_EVIDENCE = "NoCanardEvidence"
    DEGENERATE = "Degenerate"


@dataclass
class CurvatureReport:
    point: list[float]
    phi: float
    grad_phi: list[float]
    grad_norm: float
    hessian: list[list[float]]
    D1: float
    D2: float
    D3: Optional[float]
    hessian_class: HessianClass
    verdict: CurvatureVerdict
    extremum_violated: bool
    tolerance: float
    method: str = "direct"
    probe_eigenvalues: Optional[list[float]] = None


@dataclass
class PointCurvature:
    """Curvature results at one pseudo-singular point"""

    chart_coords: list[float]
    direct: Optional[CurvatureReport]
    probe: Optional[CurvatureReport]
    effective: Optional[CurvatureReport]
    jacobian_verdict: JacobianVerdict
    agrees: bool
    family_reports: list[CurvatureReport] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class CurvatureAnalysis:
    system: str
    params: dict[str, float]
    points: list[PointCurvature]
    verdict: CurvatureVerdict
    jacobian_verdict: JacobianVerdict
    agrees: bool


def _is_scalar(x: Any) -> bool:
    return not isinstance(x, Jet) and np.ndim(x) == 0


def _laplace(rows: list[list]) -> Any:
    n = len(rows)
    if n == 1:
        return rows[0][0]
    if n == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    total = 0.0
    for j in range(n):
        minor = [r[:j] + r[j + 1 :] for r in rows[1:]]
        term = rows[0][j] * _laplace(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


def determinant(matrix: Sequence[Sequence]) -> Any:
    """
    Determinant of a small square matrix. Plain floats go through LU with partial pivoting,
    jets and arrays through cofactor expansion (division-free).
    """
    rows = [list(r) for r in matrix]
    if any(len(r) != len(rows) for r in rows):
        raise ValueError(f"determinant needs a square matrix, got {len(rows)} rows of lengths {[len(r) for r in rows]}")
    if all(_is_scalar(v) for r in rows for v in r):
        return float(np.linalg.det(np.array(rows, dtype=float)))
    return _laplace(rows)


def flow_curvature(
    field: VectorFieldEval,
    point: Sequence,
    derivative_orders: Optional[Sequence[int]] = None,
) -> Any:
    """
    ``phi = det(X', X'', .., X^(n))`` at ``point`` for an ``n``-dimensional field.

    Args:
        field (VectorFieldEval): The vector field.
        point (Sequence): Floats, or jets to differentiate ``phi`` with respect to the point.
        derivative_orders (Optional[Sequence[int]]): Time-derivative orders used as columns,
            ``1 .. n`` by default.
    """
    n = len(point)
    if not 2 <= n <= MAX_JET_ORDER:
        raise ValueError(f"flow_curvature supports dimensions 2 to {MAX_JET_ORDER}, got {n}")
    orders = list(range(1, n + 1)) if derivative_orders is None else list(derivative_orders)
    if len(orders) != n:
        raise ValueError(f"Need {n} derivative orders, got {orders}")

    derivatives = trajectory_jets(field, point, max(orders))
    return determinant([[derivatives[j][i] for j in orders] for i in range(n)])


def _classify(D1: float, D2: float, D3: Optional[float], tol: float) -> HessianClass:
    if D3 is None:
        if abs(D2) <= tol:
            return HessianClass.DEGENERATE
        if D2 < 0.0:
            return HessianClass.SADDLE
        return HessianClass.LOCAL_MIN if D1 > 0.0 else HessianClass.LOCAL_MAX

    if abs(D3) <= tol:
        return HessianClass.DEGENERATE
    if D1 > 0.0 and D2 > 0.0 and D3 > 0.0:
        return HessianClass.LOCAL_MIN
    if D1 < 0.0 and D2 > 0.0 and D3 < 0.0:
        return HessianClass.LOCAL_MAX
    return HessianClass.SADDLE


_VERDICTS = {
    HessianClass.SADDLE: CurvatureVerdict.CANARD_BY_CURVATURE_SADDLE,
    HessianClass.DEGENERATE: CurvatureVerdict.DEGENERATE,
    HessianClass.LOCAL_MIN: CurvatureVerdict.NO_CANARD_EVIDENCE,
    HessianClass.LOCAL_MAX: CurvatureVerdict.NO_CANARD_EVIDENCE,
}


def hessian_test_scalar(
    scalar_fn: Callable[[Sequence], Any],
    point: Sequence[float],
    method: str = "direct",
) -> CurvatureReport:
    """
    Second derivative test of a scalar function in 2 or 3 variables.

    The leading principal minors ``D1``, ``D2`` (and ``D3`` in 3D) of the Hessian decide the class;
    ``D2`` (2D) or ``D3`` (3D) within ``1e-9 * (1 + |H|^2)`` of zero is degenerate. The gradient is
    measured but not required to vanish.
    """
    n = len(point)
    if n not in (2, 3):
        raise ValueError(f"The second derivative test supports 2 or 3 variables, got {n}")

    phi, grad, hess = value_gradient_hessian(scalar_fn, point)
    norm_h = float(np.linalg.norm(hess))
    tol = DEGENERACY_RTOL * (1.0 + norm_h**2)

    D1 = float(hess[0, 0])
    D2 = float(hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0])
    D3 = float(det3(hess)) if n == 3 else None
    hessian_class = _classify(D1, D2, D3, tol)

    grad_norm = float(np.linalg.norm(grad))
    extremum_violated = grad_norm > EXTREMUM_RTOL * (1.0 + abs(phi) + norm_h)
    if extremum_violated:
        logger.warning(
            f"grad phi does not vanish at {list(point)}: |grad phi| = {grad_norm:.3e}, the second derivative test is applied regardless"
        )

    return CurvatureReport(
        point=[float(p) for p in point],
        phi=phi,
        grad_phi=grad.tolist(),
        grad_norm=grad_norm,
        hessian=hess.tolist(),
        D1=D1,
        D2=D2,
        D3=D3,
        hessian_class=hessian_class,
        verdict=_VERDICTS[hessian_class],
        extremum_violated=extremum_violated,
        tolerance=tol,
        method=method,
    )


def curvature_hessian_test(field: VectorFieldEval, point: Sequence[float]) -> CurvatureReport:
    """Second derivative test of the flow curvature ``phi`` of ``field`` at ``point`` (chart dimension 2 or 3)"""
    if len(point) not in (2, 3):
        raise ValueError(f"curvature_hessian_test supports 2 or 3 dimensional charts, got {len(point)}")
    return hessian_test_scalar(lambda p: flow_curvature(field, p), point)


class DiagonalLinearField:
    """``x_i' = lambda_i x_i``"""

    def __init__(self, eigenvalues: Sequence[float]):
        self.eigenvalues = [float(v) for v in eigenvalues]

    def __call__(self, point: Sequence) -> list:
        return [lam * x for lam, x in zip(self.eigenvalues, point)]


def linear_identity_phi(eigenvalues: Sequence[float], point: Sequence[float]) -> float:
    """Closed-form flow curvature of the diagonal linear field with the given eigenvalues"""
    if len(eigenvalues) != len(point):
        raise ValueError(f"{len(eigenvalues)} eigenvalues for a point of dimension {len(point)}")
    if len(eigenvalues) == 2:
        l1, l2 = eigenvalues
        x1, x2 = point
        return x1 * x2 * l1 * l2 * (l2 - l1)
    if len(eigenvalues) == 3:
        l1, l2, l3 = eigenvalues
        x1, x2, x3 = point
        return x1 * x2 * x3 * l1 * l2 * l3 * (l2 - l1) * (l1 - l3) * (l2 - l3)
    raise ValueError(f"linear_identity_phi needs 2 or 3 eigenvalues, got {len(eigenvalues)}")


def _degenerate_probe(spectrum: SpectrumReport, reason: str) -> CurvatureReport:
    logger.debug(f"Linearized curvature probe is degenerate: {reason}")
    n = spectrum.dimension
    return CurvatureReport(
        point=[1.0] * n,
        phi=0.0,
        grad_phi=[0.0] * n,
        grad_norm=0.0,
        hessian=[[0.0] * n for _ in range(n)],
        D1=0.0,
        D2=0.0,
        D3=0.0 if n == 3 else None,
        hessian_class=HessianClass.DEGENERATE,
        verdict=CurvatureVerdict.NO_CANARD_EVIDENCE,
        extremum_violated=False,
        tolerance=spectrum.tolerance,
        method="linearized_probe",
        probe_eigenvalues=[],
    )


def linearized_curvature_test(spectrum: SpectrumReport) -> CurvatureReport:
    """
    Second derivative test of the flow curvature of the diagonal linear field built from the
    non-zero real eigenvalues of ``spectrum``, at the unit point.

    At an equilibrium of a 3D chart ``phi`` vanishes to third order and the direct test is always
    degenerate; this probe reads the sign structure off the linearization instead.
    """
    tol = spectrum.tolerance
    if any(abs(z.imag) > tol for z in spectrum.eigenvalues):
        return _degenerate_probe(spectrum, f"complex spectrum {spectrum.eigenvalues}")
    kept = [z.real for z in spectrum.eigenvalues if abs(z) > tol]
    if len(kept) < 2:
        return _degenerate_probe(spectrum, f"fewer than two non-zero eigenvalues in {spectrum.eigenvalues}")

    report = hessian_test_scalar(
        lambda p: flow_curvature(DiagonalLinearField(kept), p),
        [1.0] * len(kept),
        method="linearized_probe",
    )
    report.probe_eigenvalues = kept
    return report


def _effective_report(reduced, chart: Sequence[float], spectrum: Optional[SpectrumReport]):
    direct = curvature_hessian_test(reduced, chart)
    probe = None
    effective = direct
    if direct.hessian_class == HessianClass.DEGENERATE and spectrum is not None:
        probe = linearized_curvature_test(spectrum)
        effective = probe
    return direct, probe, effective


def _jacobian_agrees(jacobian: JacobianVerdict, curvature: CurvatureVerdict) -> bool:
    jacobian_saddle = jacobian in (
        JacobianVerdict.CANARD_BY_SADDLE,
        JacobianVerdict.DEGENERATE_CANARD_BY_SADDLE,
    )
    return jacobian_saddle == (curvature == CurvatureVerdict.CANARD_BY_CURVATURE_SADDLE)


def combine_curvature_verdicts(reports: Sequence[Optional[CurvatureReport]]) -> CurvatureVerdict:
    classes = [r.hessian_class for r in reports if r is not None]
    if HessianClass.SADDLE in classes:
        return CurvatureVerdict.CANARD_BY_CURVATURE_SADDLE
    if classes and len(classes) == len(reports) and all(c == HessianClass.DEGENERATE for c in classes):
        return CurvatureVerdict.DEGENERATE
    return CurvatureVerdict.NO_CANARD_EVIDENCE


def curvature_at_point(system: SlowFastSystem, point: PseudoSingularPoint) -> PointCurvature:
    jacobian_verdict = verdict_from_spectrum(point.spectrum)
    result = PointCurvature(
        chart_coords=point.chart_coords,
        direct=None,
        probe=None,
        effective=None,
        jacobian_verdict=jacobian_verdict,
        agrees=False,
    )
    try:
        reduced = reduced_field_at(system, point.full_coords)
        result.direct, result.probe, result.effective = _effective_report(
            reduced, point.chart_coords, point.spectrum
        )
    except EvaluationException as e:
        logger.warning(f"Curvature test failed at {point.chart_coords}: {e}")
        result.error = str(e)
        return result

    for sample in point.family_samples:
        try:
            reduced = reduced_field_at(system, sample.full_coords)
            result.family_reports.append(
                _effective_report(reduced, sample.chart_coords, sample.spectrum)[2]
            )
        except EvaluationException:
            logger.debug(f"Curvature test failed at family sample {sample.chart_coords}", exc_info=True)

    result.agrees = _jacobian_agrees(jacobian_verdict, result.effective.verdict)
    if not result.agrees:
        logger.warning(
            f"Methods disagree at {point.chart_coords}: Jacobian {jacobian_verdict.value}, curvature {result.effective.verdict.value} ({result.effective.method})"
        )
    return result


def canard_verdict_curvature(
    system: SlowFastSystem, points: Sequence[PseudoSingularPoint]
) -> CurvatureAnalysis:
    """
    Curvature test at every pseudo-singular point, using the direct test on the reduced field and
    the linearized probe where the direct test is degenerate, cross-checked against the Jacobian
    verdicts of the same points.
    """
    per_point = [curvature_at_point(system, p) for p in points]
    verdict = combine_curvature_verdicts([p.effective for p in per_point])
    jacobian_verdict = combine_verdicts([p.verdict for p in points])
    agrees = _jacobian_agrees(jacobian_verdict, verdict)
    if not agrees:
        logger.warning(
            f"Canard verdicts disagree for {system.name}: Jacobian {jacobian_verdict.value}, curvature {verdict.value}"
        )
    return CurvatureAnalysis(
        system=system.name,
        params=dict(system.params),
        points=per_point,
        verdict=verdict,
        jacobian_verdict=jacobian_verdict,
        agrees=agrees,
    )
