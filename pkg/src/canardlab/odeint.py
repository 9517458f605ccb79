"""
Explicit Runge-Kutta integration of the full slow-fast system and canard metrics of the resulting
trajectories.

The adaptive solver is the Dormand-Prince 5(4) pair with PI step-size control and its 4th order
continuous extension for dense output. Fixed-step integration is available with the same pair
(advancing its 5th order solution) and with the classical 4th order Runge-Kutta method.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from canardlab.diffgeo import VectorFieldEval
from canardlab.exceptions import (
    IntegrationException,
    NonFiniteStateException,
    StepUnderflowException,
)
from canardlab.slowfast import SlowFastSystem, fold_residuals, full_vector_field, reduce

logger = logging.getLogger(__name__)

METHODS = ("dopri5", "rk4")

# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
# difference between the 5th and the embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension
_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)

# PI controller constants
_BETA = 0.04
_EXPO1 = 0.2 - 0.75 * _BETA
_SAFE = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0


@dataclass(frozen=True)
class SolverOptions:
    """
    Args:
        method (str): ``"dopri5"`` or ``"rk4"`` (always fixed-step).
        adaptive (bool): Step-size control for ``dopri5``.
        rtol (float): Relative tolerance of the adaptive solver.
        atol (float): Absolute tolerance of the adaptive solver.
        max_step (float): Upper bound of the adaptive step.
        fixed_step (float): Nominal step of the fixed-step modes. The span is divided into
            equal steps no longer than this.
        max_steps (int): Abort after this many attempted steps.
    """

    method: str = "dopri5"
    adaptive: bool = True
    rtol: float = 1e-9
    atol: float = 1e-11
    max_step: float = 1e-2
    fixed_step: float = 1e-3
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"Unknown method '{self.method}', available: {METHODS}")
        if not (self.rtol > 0.0 and self.atol > 0.0):
            raise ValueError(f"Tolerances must be positive, got rtol={self.rtol}, atol={self.atol}")
        if not (self.max_step > 0.0 and self.fixed_step > 0.0):
            raise ValueError("max_step and fixed_step must be positive")

    @property
    def is_adaptive(self) -> bool:
        return self.method == "dopri5" and self.adaptive


@dataclass
class Trajectory:
    variables: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class CanardMetrics:
    closest_approach_to_M: float
    closest_approach_time: float
    attracting_dwell: float
    repelling_dwell: float
    eta: float
    reference_point: list[float]


class _Counter:
    """Wraps the vector field into ``ndarray -> ndarray`` and counts evaluations"""

    def __init__(self, field_: VectorFieldEval):
        self.field = field_
        self.n_evals = 0

    def __call__(self, y: np.ndarray) -> np.ndarray:
        self.n_evals += 1
        return np.array([float(v) for v in self.field(list(y))])


def _check_finite(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise NonFiniteStateException(f"State became non-finite at t = {t}: {y}")


def _dopri_stages(rhs: Callable, y: np.ndarray, h: float, k1: np.ndarray) -> tuple[np.ndarray, list]:
    k = [k1]
    for s in range(1, 7):
        increment = sum(a * ki for a, ki in zip(_A[s], k))
        k.append(rhs(y + h * increment))
    # the seventh stage is evaluated at the 5th order solution (FSAL)
    y_new = y + h * sum(a * ki for a, ki in zip(_A[6], k[:6]))
    return y_new, k


def _dense_coefficients(y0, y1, k: list, h: float) -> tuple:
    r2 = y1 - y0
    r3 = h * k[0] - r2
    r4 = r2 - h * k[6] - r3
    r5 = h * sum(d * ki for d, ki in zip(_D, k))
    return y0, r2, r3, r4, r5


def _dense_eval(rcont: tuple, theta: float) -> np.ndarray:
    r1, r2, r3, r4, r5 = rcont
    theta1 = 1.0 - theta
    return r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))


def _hermite(y0, f0, y1, f1, h: float, theta: float) -> np.ndarray:
    h00 = (1 + 2 * theta) * (1 - theta) ** 2
    h10 = theta * (1 - theta) ** 2
    h01 = theta**2 * (3 - 2 * theta)
    h11 = theta**2 * (theta - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, options: SolverOptions) -> float:
    scale = options.atol + options.rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(rhs: Callable, t: float, y: np.ndarray, f0: np.ndarray, options: SolverOptions) -> float:
    scale = options.atol + options.rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, options.max_step)
    f1 = rhs(y + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1, options.max_step)


class _Recorder:
    """Collects output samples, either at every step or at requested times"""

    def __init__(self, t0: float, y0: np.ndarray, t_eval: Optional[np.ndarray]):
        self.t_eval = t_eval
        self.times: list[float] = []
        self.states: list[np.ndarray] = []
        self.next_index = 0
        if t_eval is None:
            self.add(t0, y0)
        else:
            while self.next_index < len(t_eval) and t_eval[self.next_index] <= t0:
                self.add(float(t_eval[self.next_index]), y0)
                self.next_index += 1

    def add(self, t: float, y: np.ndarray) -> None:
        self.times.append(t)
        self.states.append(np.array(y))

    def step(
        self,
        t: float,
        t_new: float,
        y_new: np.ndarray,
        interpolate: Callable[[float], np.ndarray],
    ) -> None:
        if self.t_eval is None:
            self.add(t_new, y_new)
            return
        while self.next_index < len(self.t_eval) and self.t_eval[self.next_index] <= t_new:
            te = float(self.t_eval[self.next_index])
            y = y_new if te == t_new else interpolate((te - t) / (t_new - t))
            self.add(te, y)
            self.next_index += 1


def _rejected_step_size(h: float, err: float, y_new: np.ndarray) -> float:
    """Smaller step after a rejection. A non-finite trial state always takes the fixed minimum factor"""
    if np.isfinite(err) and err > 1.0 and np.all(np.isfinite(y_new)):
        return h / min(1.0 / _FAC_MIN, err**_EXPO1 / _SAFE)
    return h * _FAC_MIN


def _integrate_adaptive(rhs, t0, t1, y, options: SolverOptions, recorder: _Recorder, meta: dict):
    eps = np.finfo(float).eps
    f0 = rhs(y)
    t = t0
    h = _initial_step(rhs, t, y, f0, options)
    facold = 1e-4
    last_rejected = False
    n_steps = n_rejected = 0

    while t < t1:
        if n_steps + n_rejected >= options.max_steps:
            raise IntegrationException(
                f"Exceeded {options.max_steps} steps at t = {t} (span end {t1})"
            )
        if h < 10.0 * eps * max(abs(t), 1.0):
            raise StepUnderflowException(
                f"Step size {h:.3e} underflowed at t = {t}. The system is too stiff for the explicit "
                f"solver at these tolerances; a larger epsilon or looser tolerances are needed"
            )
        h = min(h, options.max_step, t1 - t)

        y_new, k = _dopri_stages(rhs, y, h, f0)
        err = _error_norm(h * sum(e * ki for e, ki in zip(_E, k)), y, y_new, options)

        if err <= 1.0 and np.all(np.isfinite(y_new)):
            fac11 = err**_EXPO1
            fac = fac11 / facold**_BETA
            fac = min(1.0 / _FAC_MIN, max(1.0 / _FAC_MAX, fac / _SAFE))
            h_new = h / fac
            facold = max(err, 1e-4)

            rcont = _dense_coefficients(y, y_new, k, h)
            t_new = t1 if t1 - (t + h) <= 10.0 * eps * max(abs(t1), 1.0) else t + h
            recorder.step(t, t_new, y_new, lambda theta: _dense_eval(rcont, theta))
            t = t_new
            y, f0 = y_new, k[6]
            n_steps += 1
            if last_rejected:
                h_new = min(h_new, h)
            last_rejected = False
            h = h_new
        else:
            h = _rejected_step_size(h, err, y_new)
            n_rejected += 1
            last_rejected = True

        _check_finite(y, t)

    meta.update(n_steps=n_steps, n_rejected=n_rejected)
    return y


def _rk4_step(rhs, y, h, f0):
    k2 = rhs(y + 0.5 * h * f0)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + h / 6.0 * (f0 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_fixed(rhs, t0, t1, y, options: SolverOptions, recorder: _Recorder, meta: dict):
    n = max(1, int(math.ceil((t1 - t0) / options.fixed_step - 1e-9)))
    h = (t1 - t0) / n
    f0 = rhs(y)
    for i in range(n):
        t = t0 + i * h
        t_new = t1 if i == n - 1 else t0 + (i + 1) * h
        if options.method == "rk4":
            y_new = _rk4_step(rhs, y, h, f0)
            f1 = rhs(y_new)
        else:
            y_new, k = _dopri_stages(rhs, y, h, f0)
            f1 = k[6]
        _check_finite(y_new, t_new)
        recorder.step(t, t_new, y_new, lambda theta: _hermite(y, f0, y_new, f1, h, theta))
        y, f0 = y_new, f1
    meta.update(n_steps=n, n_rejected=0)
    return y


def integrate(
    field: VectorFieldEval,
    x0: Sequence[float],
    t_span: tuple[float, float],
    options: SolverOptions = SolverOptions(),
    t_eval: Optional[Sequence[float]] = None,
    variables: Optional[Sequence[str]] = None,
) -> Trajectory:
    """
    Integrate ``X' = field(X)`` from ``x0`` over ``t_span``.

    Args:
        field (VectorFieldEval): Right-hand side.
        x0 (Sequence[float]): Initial state.
        t_span (tuple[float, float]): ``(t0, t1)`` with ``t0 <= t1``.
        options (SolverOptions): Method and tolerances.
        t_eval (Optional[Sequence[float]]): Increasing output times inside ``t_span``. By default
            every step is recorded.
        variables (Optional[Sequence[str]]): Names stored on the trajectory.

    Raises:
        StepUnderflowException: If the adaptive step size collapses.
        NonFiniteStateException: If the state stops being finite.
    """
    t0, t1 = (float(t) for t in t_span)
    if not (math.isfinite(t0) and math.isfinite(t1)) or t1 < t0:
        raise ValueError(f"t_span must be finite and increasing, got {t_span}")
    y = np.array(x0, dtype=float)
    _check_finite(y, t0)
    names = tuple(variables) if variables is not None else getattr(
        field, "variables", tuple(f"x{i}" for i in range(len(y)))
    )

    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) <= 0.0) or (len(t_eval) and (t_eval[0] < t0 or t_eval[-1] > t1)):
            raise ValueError("t_eval must be strictly increasing and inside t_span")

    rhs = _Counter(field)
    recorder = _Recorder(t0, y, t_eval)
    meta = {
        "method": options.method,
        "adaptive": options.is_adaptive,
        "rtol": options.rtol,
        "atol": options.atol,
        "max_step": options.max_step,
        "fixed_step": options.fixed_step,
        "n_steps": 0,
        "n_rejected": 0,
    }

    time_start = time.time()
    if t1 > t0:
        if options.is_adaptive:
            _integrate_adaptive(rhs, t0, t1, y, options, recorder, meta)
        else:
            _integrate_fixed(rhs, t0, t1, y, options, recorder, meta)
    meta["n_evals"] = rhs.n_evals
    logger.debug(
        f"Integrated over [{t0}, {t1}] with {options.method}: {meta['n_steps']} steps, {meta['n_rejected']} rejected, {time.time() - time_start:.3f} seconds"
    )

    return Trajectory(
        variables=names,
        times=np.array(recorder.times),
        states=np.array(recorder.states).reshape(len(recorder.times), len(y)),
        meta=meta,
    )


def _trapezoid(indicator: np.ndarray, times: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    weights = 0.5 * (indicator[1:].astype(float) + indicator[:-1].astype(float))
    return float(np.sum(weights * np.diff(times)))


def canard_metrics(
    trajectory: Trajectory,
    system: SlowFastSystem,
    M: Sequence[float],
    eta: float = 0.05,
) -> CanardMetrics:
    """
    Closest approach of the trajectory to ``M`` and the time spent near the attracting
    (``dg/dy < 0``) and repelling (``dg/dy > 0``) parts of the critical manifold, where "near"
    means ``|g| < eta``.
    """
    states = trajectory.states
    columns = [states[:, i] for i in range(states.shape[1])]
    g, g_y = fold_residuals(system, columns)
    g = np.broadcast_to(np.asarray(g, dtype=float), trajectory.times.shape)
    g_y = np.broadcast_to(np.asarray(g_y, dtype=float), trajectory.times.shape)

    near = np.abs(g) < eta
    distance = np.linalg.norm(states - np.asarray(M, dtype=float), axis=1)
    closest = int(np.argmin(distance))

    return CanardMetrics(
        closest_approach_to_M=float(distance[closest]),
        closest_approach_time=float(trajectory.times[closest]),
        attracting_dwell=_trapezoid(near & (g_y < 0.0), trajectory.times),
        repelling_dwell=_trapezoid(near & (g_y > 0.0), trajectory.times),
        eta=eta,
        reference_point=[float(m) for m in M],
    )


_DEFAULT_FAST_VALUE = {"chua3": 2.0, "chua4": 1.5}


def default_initial_condition(system: SlowFastSystem) -> list[float]:
    """
    Start on the critical manifold with the fast variable at 2 (1.5 for the 4D Chua circuit), the
    remaining slow variables at 0 and ``x_1`` from the elimination rule.
    """
    chart = [0.0] * (system.p - 1) + [_DEFAULT_FAST_VALUE.get(system.builtin, 2.0)]
    return reduce(system).chart_to_full(chart)


def simulate(
    system: SlowFastSystem,
    x0: Optional[Sequence[float]] = None,
    t_span: tuple[float, float] = (0.0, 100.0),
    transient: float = 20.0,
    options: SolverOptions = SolverOptions(),
    n_samples: Optional[int] = None,
) -> Trajectory:
    """
    Integrate the full system. With ``x0=None`` the run starts from
    :func:`default_initial_condition` and first discards ``transient`` time units.

    Args:
        n_samples (Optional[int]): Equally spaced output samples over ``t_span``; every step when None.
    """
    rhs = full_vector_field(system)
    discarded = 0.0
    if x0 is None:
        x0 = default_initial_condition(system)
        if transient > 0.0:
            logger.info(f"Discarding a transient of {transient} time units from {x0}")
            x0 = integrate(rhs, x0, (0.0, transient), options, t_eval=[transient]).final_state
            discarded = transient

    t_eval = None
    if n_samples is not None:
        if n_samples < 1:
            raise ValueError(f"n_samples must be positive, got {n_samples}")
        t_eval = np.linspace(t_span[0], t_span[1], n_samples) if t_span[1] > t_span[0] else [t_span[0]]

    logger.info(f"Start integration of {system.name}")
    logger.info(f"    Parameters: {dict(system.params)}, epsilon = {system.epsilon}")
    logger.info(f"    Initial state: {list(x0)}")
    logger.info(f"    Span: {t_span}, options: {options}")
    trajectory = integrate(rhs, x0, t_span, options, t_eval=t_eval)
    trajectory.meta["transient"] = discarded
    logger.info("End integration")
    logger.info(f"    Steps {trajectory.meta['n_steps']}, rejected {trajectory.meta['n_rejected']}")
    return trajectory
