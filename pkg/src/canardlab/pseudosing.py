"""
Pseudo-singular points of slow-fast systems and their classification through the Jacobian of the
reduced normalized vector field.

Pseudo-singular points are the common zeros of ``g``, ``dg/dy`` and ``sum_i dg/dx_i f_i``. They are
located by damped Newton iterations seeded from the cell centres of a grid over a box in full
coordinates. All seeds are iterated together, with numpy arrays as jet coefficients.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from canardlab import expr as ex
from canardlab.diffgeo import EquilibriumType, SpectrumReport, jacobian, spectrum_report
from canardlab.exceptions import EvaluationException, NotAnEquilibriumException
from canardlab.slowfast import (
    ImplicitElimination,
    ReducedField,
    SlowFastSystem,
    g_partials,
    normalized_slow_field,
    reduce,
    slow_equations,
)

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL = (-2.0, 2.0)

# reduced field norm below which a chart point counts as an equilibrium
EQUILIBRIUM_TOL = 1e-6

Box = Mapping[str, tuple[float, float]]
Residual = Callable[[Sequence], list]


@dataclass(frozen=True)
class SearchOptions:
    """
    Args:
        tol (float): Residual norm at which an iteration counts as converged.
        max_iter (int): Newton iterations per seed.
        max_halvings (int): Backtracking halvings of the Newton step before a seed is given up.
        dedupe_tol (float): Roots closer than this in chart coordinates are merged.
        verify_tol (float): Independent residual re-check of every returned root.
        singular_rtol (float): Relative size of the smallest singular value below which the
            Newton matrix counts as singular.
        family_offsets (tuple[float, ...]): Offsets of the family samples from the pinned value.
    """

    tol: float = 1e-10
    max_iter: int = 50
    max_halvings: int = 30
    dedupe_tol: float = 1e-6
    verify_tol: float = 1e-8
    singular_rtol: float = 1e-13
    family_offsets: tuple[float, ...] = (-0.5, 0.5)


@dataclass
class SearchInfo:
    n_seeds: int = 0
    n_converged: int = 0
    n_skipped: int = 0
    n_unique: int = 0
    time_taken: float = -1.0


class JacobianVerdict(str, Enum):
    CANARD_BY_SADDLE = "CanardBySaddle"
    DEGENERATE_CANARD_BY_SADDLE = "DegenerateCanardBySaddle"
    NO_CANARD_EVIDENCE = "NoCanardEvidence"


@dataclass
class FamilySample:
    offset: float
    full_coords: list[float]
    chart_coords: list[float]
    spectrum: Optional[SpectrumReport]


@dataclass
class PseudoSingularPoint:
    chart_coords: list[float]
    full_coords: list[float]
    residual_norm: float
    spectrum: Optional[SpectrumReport]
    verdict: JacobianVerdict
    family: bool = False
    free_variable: Optional[str] = None
    family_samples: list[FamilySample] = field(default_factory=list)
    family_spectrum_varies: Optional[bool] = None
    error: Optional[str] = None


@dataclass
class Equilibrium:
    """Equilibrium of the full system with the Jacobian of the normalized slow dynamics there"""

    point: list[float]
    residual_norm: float
    jacobian: list[list[float]]
    spectrum: Optional[SpectrumReport]


@dataclass
class ThresholdCheck:
    condition: str
    satisfied: bool
    values: dict[str, float]


@dataclass
class JacobianAnalysis:
    system: str
    params: dict[str, float]
    box: dict[str, tuple[float, float]]
    grid_per_axis: int
    points: list[PseudoSingularPoint]
    verdict: JacobianVerdict
    threshold_checks: list[ThresholdCheck]
    info: SearchInfo
    options: SearchOptions


def pseudo_singular_residual(system: SlowFastSystem, point: Sequence) -> list:
    """``(g, dg/dy, sum_i dg/dx_i f_i)`` at a full-space point. Accepts arrays and jets"""
    g, grad = g_partials(system, point)
    f_values = slow_equations(system, point)
    return [g, grad[-1], sum(grad[i] * f_values[i] for i in range(system.p))]


def equilibrium_residual(system: SlowFastSystem, point: Sequence) -> list:
    """``(f_1, .., f_p, g)``"""
    return slow_equations(system, point) + [ex.evaluate(system.g, system.bindings(point))]


def normalize_box(system: SlowFastSystem, box: Optional[Box] = None) -> dict[str, tuple[float, float]]:
    """Full-coordinate box with every variable present; unlisted variables get ``[-2, 2]``"""
    box = dict(box or {})
    unknown = set(box) - set(system.variables)
    if unknown:
        raise ValueError(
            f"Box names {sorted(unknown)} are not variables of '{system.name}' {list(system.variables)}"
        )
    result = {}
    for name in system.variables:
        lo, hi = (float(v) for v in box.get(name, DEFAULT_INTERVAL))
        if not lo < hi:
            raise ValueError(f"Degenerate box interval for {name}: [{lo}, {hi}]")
        result[name] = (lo, hi)
    return result


def grid_seeds(box: Mapping[str, tuple[float, float]], grid_per_axis: int) -> np.ndarray:
    """Cell centres of a regular grid, shape ``(n_variables, grid_per_axis ** n_variables)``"""
    if grid_per_axis < 2:
        raise ValueError(f"grid_per_axis must be at least 2, got {grid_per_axis}")
    axes = []
    for lo, hi in box.values():
        h = (hi - lo) / grid_per_axis
        axes.append(lo + (np.arange(grid_per_axis) + 0.5) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.array([m.ravel() for m in mesh])


def _in_box(point: np.ndarray, box: Mapping[str, tuple[float, float]], slack: float = 1e-12) -> bool:
    return all(lo - slack <= v <= hi + slack for v, (lo, hi) in zip(point, box.values()))


def _residual_array(residual: Residual, x: np.ndarray) -> np.ndarray:
    values = residual([x[i] for i in range(len(x))])
    return np.array(
        [np.broadcast_to(np.asarray(v, dtype=float), x.shape[1:]) for v in values]
    )


def _jacobian_array(residual: Residual, x: np.ndarray) -> np.ndarray:
    """Residual Jacobians for all columns of ``x``, shape ``(batch, m, n)``"""
    return np.moveaxis(jacobian(residual, [x[i] for i in range(len(x))]), -1, 0)


class _Status:
    RUNNING = 0
    CONVERGED = 1
    SINGULAR = 2
    STAGNATED = 3
    DIVERGED = 4


def damped_newton(
    residual: Residual,
    x: np.ndarray,
    options: SearchOptions,
    free: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Batched damped Newton iteration on the columns of ``x`` (shape ``(n, batch)``).

    The step is the minimum-norm Gauss-Newton step ``-pinv(J) r`` over the coordinates selected by
    ``free``, which equals the Newton step for square systems. Steps are halved until the residual
    norm decreases. Columns with a singular Newton matrix or without decrease after
    ``max_halvings`` halvings are frozen.

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: final points, residual norms and a mask of the
        accepted columns.
    """
    x = np.array(x, dtype=float)
    n, batch = x.shape
    free = np.ones(n, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    status = np.full(batch, _Status.RUNNING)

    with np.errstate(over="ignore", invalid="ignore"):
        r = _residual_array(residual, x)
        norm = np.linalg.norm(r, axis=0)

        for _ in range(options.max_iter):
            running = status == _Status.RUNNING
            status[running & (norm <= options.tol)] = _Status.CONVERGED
            status[running & ~np.isfinite(norm)] = _Status.DIVERGED
            idx = np.flatnonzero(status == _Status.RUNNING)
            if idx.size == 0:
                break

            jac = _jacobian_array(residual, x[:, idx])[:, :, free]
            finite = np.all(np.isfinite(jac), axis=(1, 2))
            status[idx[~finite]] = _Status.DIVERGED
            idx, jac = idx[finite], jac[finite]
            if idx.size == 0:
                continue

            sv = np.linalg.svd(jac, compute_uv=False)
            singular = sv[:, -1] <= options.singular_rtol * sv[:, 0]
            for i in idx[singular]:
                logger.debug(f"Singular Newton matrix at {x[:, i]}, seed skipped")
            status[idx[singular]] = _Status.SINGULAR
            idx, jac = idx[~singular], jac[~singular]
            if idx.size == 0:
                continue

            step = np.zeros((n, idx.size))
            step[free] = -np.einsum("bkm,mb->kb", np.linalg.pinv(jac), r[:, idx])

            t = np.ones(idx.size)
            pending = np.ones(idx.size, dtype=bool)
            for _ in range(options.max_halvings + 1):
                cols = np.flatnonzero(pending)
                trial = x[:, idx[cols]] + t[cols] * step[:, cols]
                r_trial = _residual_array(residual, trial)
                norm_trial = np.linalg.norm(r_trial, axis=0)
                better = norm_trial < norm[idx[cols]]
                accepted = cols[better]
                x[:, idx[accepted]] = trial[:, better]
                r[:, idx[accepted]] = r_trial[:, better]
                norm[idx[accepted]] = norm_trial[better]
                pending[accepted] = False
                if not pending.any():
                    break
                t[pending] *= 0.5
            status[idx[pending]] = _Status.STAGNATED

    converged = (status == _Status.CONVERGED) | (norm <= options.tol)
    # roundoff can stall the line search just above tol
    stalled = np.isin(status, (_Status.STAGNATED, _Status.RUNNING)) & (norm <= options.verify_tol)
    return x, norm, converged | stalled


def _solve_seeds(
    residual: Residual,
    seeds: np.ndarray,
    options: SearchOptions,
    free: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Newton over all seeds at once, falling back to one seed at a time when an evaluation fails"""
    if seeds.shape[1] == 0:
        return seeds, np.zeros(0, dtype=bool)
    try:
        x, _, ok = damped_newton(residual, seeds, options, free)
        return x, ok
    except EvaluationException:
        logger.debug(
            "Batched Newton hit an evaluation failure, solving seeds one by one",
            exc_info=True,
        )

    x = np.array(seeds, dtype=float)
    ok = np.zeros(seeds.shape[1], dtype=bool)
    for i in range(seeds.shape[1]):
        try:
            xi, _, oki = damped_newton(residual, seeds[:, [i]], options, free)
        except EvaluationException:
            logger.debug(f"Seed {seeds[:, i]} skipped", exc_info=True)
            continue
        x[:, i] = xi[:, 0]
        ok[i] = oki[0]
    return x, ok


def _dedupe(points: Sequence[np.ndarray], key: Callable[[np.ndarray], np.ndarray], tol: float) -> list[np.ndarray]:
    ordered = sorted(points, key=lambda p: tuple(np.round(key(p), 9)))
    unique: list[np.ndarray] = []
    for p in ordered:
        if all(np.linalg.norm(key(p) - key(q)) > tol for q in unique):
            unique.append(p)
    return unique


def _pin_value(interval: tuple[float, float]) -> float:
    lo, hi = interval
    return 0.0 if lo <= 0.0 <= hi else 0.5 * (lo + hi)


def classify_reduced(reduced: ReducedField, chart: Sequence[float]) -> SpectrumReport:
    """
    Spectrum report of the reduced field's Jacobian at one of its equilibria.

    Raises:
        NotAnEquilibriumException: If the reduced field does not vanish at ``chart``.
    """
    chart = [float(c) for c in chart]
    values = np.array([float(v) for v in reduced(chart)])
    norm = float(np.linalg.norm(values))
    if not norm < EQUILIBRIUM_TOL:
        raise NotAnEquilibriumException(
            f"Reduced field has norm {norm:.3e} at {chart}, not an equilibrium"
        )
    return spectrum_report(jacobian(reduced, chart))


def verdict_from_spectrum(spectrum: Optional[SpectrumReport]) -> JacobianVerdict:
    if spectrum is None:
        return JacobianVerdict.NO_CANARD_EVIDENCE
    if spectrum.classification == EquilibriumType.SADDLE:
        return JacobianVerdict.CANARD_BY_SADDLE
    if spectrum.classification == EquilibriumType.DEGENERATE_SADDLE:
        return JacobianVerdict.DEGENERATE_CANARD_BY_SADDLE
    return JacobianVerdict.NO_CANARD_EVIDENCE


def combine_verdicts(verdicts: Sequence[JacobianVerdict]) -> JacobianVerdict:
    if JacobianVerdict.CANARD_BY_SADDLE in verdicts:
        return JacobianVerdict.CANARD_BY_SADDLE
    if JacobianVerdict.DEGENERATE_CANARD_BY_SADDLE in verdicts:
        return JacobianVerdict.DEGENERATE_CANARD_BY_SADDLE
    return JacobianVerdict.NO_CANARD_EVIDENCE


def reduced_field_at(system: SlowFastSystem, full: Sequence[float]) -> ReducedField:
    """Reduced field evaluator, warm-started at ``x_1`` of ``full`` for implicit eliminations"""
    reduced = reduce(system)
    if isinstance(system.elimination, ImplicitElimination):
        reduced.warm_start(full[0])
    return reduced


def _spectrum_changes(reference: SpectrumReport, other: SpectrumReport) -> bool:
    pairs = [(reference.trace, other.trace), (reference.delta, other.delta)]
    if reference.minor_sum is not None:
        pairs.append((reference.minor_sum, other.minor_sum))
    if reference.classification != other.classification:
        return True
    scale = 1.0 + max(abs(a) for a, _ in pairs)
    return any(abs(a - b) > 1e-9 * scale for a, b in pairs)


class PseudoSingularSearch:
    """
    Locates and classifies the pseudo-singular points of a system inside a box.
    """

    def __init__(
        self,
        system: SlowFastSystem,
        box: Optional[Box] = None,
        grid_per_axis: int = 10,
        options: SearchOptions = SearchOptions(),
    ):
        """
        Args:
            system (SlowFastSystem): The system.
            box (Optional[Box]): Intervals per full-space variable, ``[-2, 2]`` for the others.
            grid_per_axis (int): Seeds per axis, at least 2.
            options (SearchOptions): Newton and deduplication settings.
        """
        if grid_per_axis < 2:
            raise ValueError(f"grid_per_axis must be at least 2, got {grid_per_axis}")
        self.system = system
        self.box = normalize_box(system, box)
        self.grid_per_axis = grid_per_axis
        self.options = options
        self.info = SearchInfo()

    def residual(self, point: Sequence) -> list:
        return pseudo_singular_residual(self.system, point)

    def hook_pre_search(self):
        self.info = SearchInfo()
        self.info.n_seeds = self.grid_per_axis ** self.system.dimension

        logger.info("Start pseudo-singular search")
        logger.info(f"    System: {self.system.name} {dict(self.system.params)}")
        logger.info(f"    Box: {self.box}")
        logger.info(f"    Seeds: {self.info.n_seeds}")

        self.time_search_start = time.time()

    def hook_post_search(self, points: list[PseudoSingularPoint]):
        self.time_search_end = time.time()
        self.info.time_taken = self.time_search_end - self.time_search_start
        self.info.n_unique = len(points)

        logger.info("End pseudo-singular search")
        logger.info(f"    Converged seeds {self.info.n_converged} of {self.info.n_seeds}")
        logger.info(f"    Skipped seeds {self.info.n_skipped}")
        logger.info(f"    Pseudo-singular points {[p.full_coords for p in points]}")
        logger.info(f"    Time taken {self.info.time_taken} seconds")

    def _pin_families(self, roots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Move every root along the null direction of its residual Jacobian to the pinned value"""
        jac = _jacobian_array(self.residual, roots)
        _, _, vh = np.linalg.svd(jac)
        free_index = np.argmax(np.abs(vh[:, -1, :]), axis=1)

        pinned = np.array(roots)
        for k in np.unique(free_index):
            cols = np.flatnonzero(free_index == k)
            pinned[k, cols] = _pin_value(list(self.box.values())[k])
            mask = np.ones(len(roots), dtype=bool)
            mask[k] = False
            x, ok = _solve_seeds(self.residual, pinned[:, cols], self.options, mask)
            pinned[:, cols] = x
            free_index[cols[~ok]] = -1
        return pinned, free_index

    def _family_samples(self, full: np.ndarray, k: int) -> list[FamilySample]:
        mask = np.ones(len(full), dtype=bool)
        mask[k] = False
        samples = []
        for offset in self.options.family_offsets:
            start = np.array(full)
            start[k] = full[k] + offset
            x, ok = _solve_seeds(self.residual, start[:, None], self.options, mask)
            if not ok[0]:
                logger.debug(f"Family sample at offset {offset} from {list(full)} did not converge")
                continue
            sample = [float(v) for v in x[:, 0]]
            spectrum = None
            try:
                spectrum = classify_reduced(reduced_field_at(self.system, sample), sample[1:])
            except (EvaluationException, NotAnEquilibriumException):
                logger.debug(f"Family sample {sample} could not be classified", exc_info=True)
            samples.append(FamilySample(offset, sample, sample[1:], spectrum))
        return samples

    def _verify(self, full: np.ndarray) -> Optional[float]:
        try:
            r = pseudo_singular_residual(self.system, [float(v) for v in full])
            norm = float(np.linalg.norm([float(v) for v in r]))
        except EvaluationException:
            logger.warning(f"Residual re-check failed to evaluate at {list(full)}", exc_info=True)
            return None
        if not norm < self.options.verify_tol:
            logger.warning(
                f"Dropping candidate {list(full)}: residual re-check gave {norm:.3e} >= {self.options.verify_tol}"
            )
            return None
        return norm

    def _make_point(self, full: np.ndarray, free_index: Optional[int]) -> Optional[PseudoSingularPoint]:
        residual_norm = self._verify(full)
        if residual_norm is None:
            return None

        coords = [float(v) for v in full]
        point = PseudoSingularPoint(
            chart_coords=coords[1:],
            full_coords=coords,
            residual_norm=residual_norm,
            spectrum=None,
            verdict=JacobianVerdict.NO_CANARD_EVIDENCE,
        )
        try:
            point.spectrum = classify_reduced(reduced_field_at(self.system, coords), coords[1:])
        except (EvaluationException, NotAnEquilibriumException) as e:
            logger.warning(f"Could not classify pseudo-singular point {coords}: {e}")
            point.error = str(e)
        point.verdict = verdict_from_spectrum(point.spectrum)

        if free_index is not None:
            point.family = True
            point.free_variable = self.system.variables[free_index]
            point.family_samples = self._family_samples(full, free_index)
            if point.spectrum is not None:
                point.family_spectrum_varies = any(
                    s.spectrum is None or _spectrum_changes(point.spectrum, s.spectrum)
                    for s in point.family_samples
                )
        return point

    def run(self) -> list[PseudoSingularPoint]:
        self.hook_pre_search()

        seeds = grid_seeds(self.box, self.grid_per_axis)
        roots, ok = _solve_seeds(self.residual, seeds, self.options)
        self.info.n_converged = int(np.count_nonzero(ok))
        self.info.n_skipped = int(seeds.shape[1] - self.info.n_converged)
        roots = roots[:, ok]

        n_unknowns = self.system.dimension
        free_index = np.full(roots.shape[1], -1)
        if n_unknowns > 3 and roots.shape[1] > 0:
            roots, free_index = self._pin_families(roots)
            keep = free_index >= 0
            roots, free_index = roots[:, keep], free_index[keep]

        candidates = [
            np.append(roots[:, i], free_index[i])
            for i in range(roots.shape[1])
            if _in_box(roots[:, i], self.box)
        ]
        unique = _dedupe(candidates, key=lambda c: c[1:n_unknowns], tol=self.options.dedupe_tol)

        points = []
        for candidate in unique:
            k = int(candidate[-1])
            point = self._make_point(candidate[:n_unknowns], None if k < 0 else k)
            if point is not None:
                points.append(point)

        self.hook_post_search(points)
        return points


def find_pseudo_singular(
    system: SlowFastSystem,
    box: Optional[Box] = None,
    grid_per_axis: int = 10,
    options: SearchOptions = SearchOptions(),
) -> list[PseudoSingularPoint]:
    """Pseudo-singular points inside ``box``, deduplicated and sorted by chart coordinates"""
    return PseudoSingularSearch(system, box, grid_per_axis, options).run()


def builtin_threshold_checks(system: SlowFastSystem) -> list[ThresholdCheck]:
    """Closed-form parameter conditions of the built-in models, empty for other systems"""
    p = system.params
    if system.builtin == "chua3":
        alpha = p["alpha"]
        return [
            ThresholdCheck(
                "alpha > 0 and 3 + 40*alpha > 0",
                alpha > 0.0 and 3.0 + 40.0 * alpha > 0.0,
                {"alpha": alpha, "3 + 40*alpha": 3.0 + 40.0 * alpha},
            ),
            ThresholdCheck("alpha > 1/5", alpha > 0.2, {"alpha": alpha, "threshold": 0.2}),
        ]
    if system.builtin == "chua4":
        threshold = -2.0 * p["c2"] / (3.0 + 2.0 * p["c2"])
        return [
            ThresholdCheck(
                "alpha2 < -2*c2/(3 + 2*c2)",
                p["alpha2"] < threshold,
                {"alpha2": p["alpha2"], "threshold": threshold},
            )
        ]
    return []


def canard_verdict_jacobian(
    system: SlowFastSystem,
    box: Optional[Box] = None,
    grid_per_axis: int = 10,
    options: SearchOptions = SearchOptions(),
) -> JacobianAnalysis:
    search = PseudoSingularSearch(system, box, grid_per_axis, options)
    points = search.run()
    return JacobianAnalysis(
        system=system.name,
        params=dict(system.params),
        box=search.box,
        grid_per_axis=grid_per_axis,
        points=points,
        verdict=combine_verdicts([p.verdict for p in points]),
        threshold_checks=builtin_threshold_checks(system),
        info=search.info,
        options=options,
    )


def find_equilibria(
    system: SlowFastSystem,
    box: Optional[Box] = None,
    grid_per_axis: int = 10,
    options: SearchOptions = SearchOptions(),
) -> list[Equilibrium]:
    """
    Equilibria of the full system (all ``f_i = 0`` and ``g = 0``) inside ``box``, each with the
    Jacobian of the normalized slow dynamics and, up to dimension 3, its spectrum.
    """
    box = normalize_box(system, box)

    def residual(point):
        return equilibrium_residual(system, point)

    roots, ok = _solve_seeds(residual, grid_seeds(box, grid_per_axis), options)
    candidates = [roots[:, i] for i in np.flatnonzero(ok) if _in_box(roots[:, i], box)]
    unique = _dedupe(candidates, key=lambda c: c, tol=options.dedupe_tol)

    field_ = normalized_slow_field(system)
    equilibria = []
    for point in unique:
        coords = [float(v) for v in point]
        norm = float(np.linalg.norm([float(v) for v in residual(coords)]))
        if not norm < options.verify_tol:
            logger.warning(f"Dropping equilibrium candidate {coords}: residual {norm:.3e}")
            continue
        jac = jacobian(field_, coords)
        spectrum = spectrum_report(jac) if len(coords) <= 3 else None
        equilibria.append(Equilibrium(coords, norm, jac.tolist(), spectrum))
    logger.info(f"Found {len(equilibria)} equilibria of {system.name}")
    return equilibria
