"""
Slow-fast systems with ``p`` slow variables ``x_1 .. x_p`` (``p`` in {2, 3}) and one fast variable ``y``::

    x_i' = f_i(x, y)          i = 1 .. p
    eps y' = g(x, y)

The reduced (desingularized) slow flow lives on the chart ``(x_2, .., x_p, y)`` of the critical
manifold ``g = 0``, with ``x_1`` eliminated either by an explicit expression or by a 1D Newton solve.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from canardlab import expr as ex
from canardlab.exceptions import (
    EliminationException,
    ExpressionSyntaxException,
    ModelException,
    UnboundNameException,
)
from canardlab.jets import Jet, MultiJet, depth, lift, scalar_part
from canardlab.utils import dump_dict_to_file

logger = logging.getLogger(__name__)

# Newton sweeps used to lift an implicit elimination onto jets, each one doubles the number of exact orders
_JET_NEWTON_STEPS = 6


@dataclass(frozen=True)
class ExplicitElimination:
    """``x_1 = expression(x_2, .., x_p, y)`` on the critical manifold"""

    expression: ex.Expr


@dataclass(frozen=True)
class ImplicitElimination:
    """Solve ``g(x_1, ...) = 0`` for ``x_1`` by Newton's method, starting from ``seed`` or the previous solution"""

    seed: float = 0.0
    tol: float = 1e-12
    max_iter: int = 50


EliminationRule = Union[ExplicitElimination, ImplicitElimination]


@dataclass(frozen=True)
class SlowFastSystem:
    name: str
    slow_vars: tuple[str, ...]
    fast_var: str
    f: tuple[ex.Expr, ...]
    g: ex.Expr
    epsilon: float
    elimination: EliminationRule
    params: Mapping[str, float]
    builtin: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "slow_vars", tuple(self.slow_vars))
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(
            self, "params", MappingProxyType({k: float(v) for k, v in self.params.items()})
        )

        if len(self.slow_vars) not in (2, 3):
            raise ModelException(
                f"Model '{self.name}' declares {len(self.slow_vars)} slow variables, only 2 or 3 are supported"
            )
        if len(self.f) != len(self.slow_vars):
            raise ModelException(
                f"Model '{self.name}' has {len(self.slow_vars)} slow variables but {len(self.f)} slow equations"
            )
        if len(set(self.variables)) != len(self.variables):
            raise ModelException(f"Model '{self.name}' declares duplicate variable names")
        clash = set(self.variables) & set(self.params)
        if clash:
            raise ModelException(
                f"Model '{self.name}' uses {sorted(clash)} both as variables and parameters"
            )

        declared = set(self.variables) | set(self.params)
        for label, e in self._labelled_expressions():
            unknown = ex.names(e) - declared
            if unknown:
                raise UnboundNameException(
                    f"Model '{self.name}': {label} references undeclared names {sorted(unknown)}"
                )

        if isinstance(self.elimination, ExplicitElimination):
            if self.slow_vars[0] in ex.names(self.elimination.expression):
                raise ModelException(
                    f"Model '{self.name}': the elimination rule for {self.slow_vars[0]} must not reference it"
                )

    def _labelled_expressions(self):
        for name, e in zip(self.slow_vars, self.f):
            yield f"f[{name}]", e
        yield "g", self.g
        if isinstance(self.elimination, ExplicitElimination):
            yield "eliminate_x1", self.elimination.expression

    @property
    def p(self) -> int:
        return len(self.slow_vars)

    @property
    def variables(self) -> tuple[str, ...]:
        return self.slow_vars + (self.fast_var,)

    @property
    def chart_vars(self) -> tuple[str, ...]:
        return self.slow_vars[1:] + (self.fast_var,)

    @property
    def dimension(self) -> int:
        return self.p + 1

    def bindings(self, values: Sequence, names: Optional[Sequence[str]] = None) -> dict:
        names = self.variables if names is None else names
        bindings = dict(self.params)
        bindings.update(zip(names, values))
        return bindings


@dataclass(frozen=True)
class ChuaParams3:
    alpha: float = 0.2571389636
    epsilon: float = 1.0 / 20.0


@dataclass(frozen=True)
class ChuaParams4:
    alpha2: float = 0.9
    beta1: float = 0.121
    beta2: float = 0.0047
    c1: float = 0.393781
    c2: float = -0.72357
    epsilon: float = 0.098592


def _parse_all(sources: Sequence[str], variables: Sequence[str], label: str):
    parsed = []
    for i, source in enumerate(sources):
        try:
            parsed.append(ex.parse(source, variables))
        except ExpressionSyntaxException as e:
            raise type(e)(f"{label}[{i}]: {e.message}", e.line, e.column) from e
    return parsed


def chua3(params: ChuaParams3 = ChuaParams3()) -> SlowFastSystem:
    """Three-dimensional Chua circuit with one fast variable ``z`` and the cubic ``k(z) = z^3/3 - z``"""
    variables = ("x", "y", "z")
    f1, f2, g, elim = _parse_all(
        ["z - y", "alpha*(x + y)", "-x - (z^3/3 - z)", "-(z^3/3 - z)"], variables, "chua3"
    )
    return SlowFastSystem(
        name="chua3",
        slow_vars=("x", "y"),
        fast_var="z",
        f=(f1, f2),
        g=g,
        epsilon=params.epsilon,
        elimination=ExplicitElimination(elim),
        params={"alpha": params.alpha},
        builtin="chua3",
    )


def chua4(params: ChuaParams4 = ChuaParams4()) -> SlowFastSystem:
    """Four-dimensional Chua circuit with one fast variable ``u`` and the cubic ``k(u) = c1 u^3 + c2 u``"""
    if not params.c2 < 0.0:
        raise ModelException(f"chua4 requires c2 < 0, got c2 = {params.c2}")
    if not params.beta1 > 0.0:
        raise ModelException(f"chua4 requires beta1 > 0, got beta1 = {params.beta1}")

    variables = ("x", "y", "z", "u")
    f1, f2, f3, g, elim = _parse_all(
        [
            "beta1*(z - x - u)",
            "beta2*z",
            "-alpha2*z - y - x",
            "x - (c1*u^3 + c2*u)",
            "c1*u^3 + c2*u",
        ],
        variables,
        "chua4",
    )
    return SlowFastSystem(
        name="chua4",
        slow_vars=("x", "y", "z"),
        fast_var="u",
        f=(f1, f2, f3),
        g=g,
        epsilon=params.epsilon,
        elimination=ExplicitElimination(elim),
        params={
            "alpha2": params.alpha2,
            "beta1": params.beta1,
            "beta2": params.beta2,
            "c1": params.c1,
            "c2": params.c2,
        },
        builtin="chua4",
    )


BUILTIN_MODELS = {
    "chua3": (ChuaParams3, chua3),
    "chua4": (ChuaParams4, chua4),
}


def builtin_system(name: str, overrides: Optional[Mapping[str, float]] = None) -> SlowFastSystem:
    """Instantiate a built-in model with its default parameters, optionally overridden by name"""
    try:
        params_cls, factory = BUILTIN_MODELS[name]
    except KeyError:
        raise ModelException(
            f"Unknown built-in model '{name}'. Available: {sorted(BUILTIN_MODELS)}"
        ) from None
    try:
        params = params_cls(**dict(overrides or {}))
    except TypeError as e:
        known = [f.name for f in dataclasses.fields(params_cls)]
        raise ModelException(
            f"Unknown parameter for '{name}' in {dict(overrides)}. Known parameters: {known}"
        ) from e
    return factory(params)


def with_params(system: SlowFastSystem, overrides: Mapping[str, float]) -> SlowFastSystem:
    """
    Return a copy of ``system`` with some parameters (or ``epsilon``) replaced.
    Built-in models are rebuilt through their factory so that their invariants are re-checked.
    """
    if system.builtin in BUILTIN_MODELS:
        current = dict(system.params, epsilon=system.epsilon)
        unknown = set(overrides) - set(current)
        if unknown:
            raise ModelException(
                f"Unknown parameter(s) {sorted(unknown)} for '{system.name}'. Known parameters: {sorted(current)}"
            )
        return builtin_system(system.builtin, {**current, **overrides})

    unknown = set(overrides) - set(system.params) - {"epsilon"}
    if unknown:
        raise ModelException(
            f"Unknown parameter(s) {sorted(unknown)} for '{system.name}'. Known parameters: {sorted(system.params)} and epsilon"
        )
    params = {**system.params, **{k: v for k, v in overrides.items() if k != "epsilon"}}
    return dataclasses.replace(
        system, params=params, epsilon=float(overrides.get("epsilon", system.epsilon))
    )


def _common_depth(values: Sequence) -> list:
    template = max(values, key=depth)
    return [lift(v, template) for v in values]


def g_partials(system: SlowFastSystem, point: Sequence) -> tuple[Any, list]:
    """Value of ``g`` and its exact partial derivatives with respect to all variables at ``point``"""
    values = _common_depth(list(point))
    seeds = MultiJet.seed(values, order=1)
    g = ex.evaluate(system.g, system.bindings(seeds))
    if isinstance(g, MultiJet) and g.depth == seeds[0].depth:
        return g.value, list(g.gradient)
    return g, [0.0] * len(values)


def slow_equations(system: SlowFastSystem, point: Sequence) -> list:
    bindings = system.bindings(point)
    return [ex.evaluate(f, bindings) for f in system.f]


def critical_manifold_residual(system: SlowFastSystem, point: Sequence[float]) -> float:
    """``g`` at a full-space point, zero exactly on the critical manifold"""
    return ex.eval_real(system.g, system.bindings([float(v) for v in point]))


def fold_residuals(system: SlowFastSystem, point: Sequence) -> tuple[Any, Any]:
    """``(g, dg/dy)`` at ``point``, the fold is their common zero set. Accepts arrays for batched evaluation"""
    g, grad = g_partials(system, point)
    return g, grad[-1]


def tangency_residual(system: SlowFastSystem, point: Sequence) -> Any:
    """``sum_i dg/dx_i * f_i``"""
    _, grad = g_partials(system, point)
    f_values = slow_equations(system, point)
    return sum(grad[i] * f_values[i] for i in range(system.p))


class ReducedField:
    """
    Reduced normalized vector field on the chart ``(x_2, .., x_p, y)``::

        x_i' = -f_i * dg/dy                 i = 2 .. p
        y'   = sum_i dg/dx_i * f_i

    with ``x_1`` substituted by the elimination rule. Evaluators using an implicit rule keep a
    warm-start cache; use :meth:`clone` to obtain an independent evaluator per thread.
    """

    def __init__(self, system: SlowFastSystem):
        self.system = system
        self.variables = system.chart_vars
        self._warm_start: Optional[float] = None

    @property
    def dimension(self) -> int:
        return len(self.variables)

    def clone(self) -> "ReducedField":
        return ReducedField(self.system)

    def warm_start(self, x1: float) -> "ReducedField":
        self._warm_start = float(x1)
        return self

    def eliminate(self, chart: Sequence) -> Any:
        rule = self.system.elimination
        if isinstance(rule, ExplicitElimination):
            return ex.evaluate(rule.expression, self.system.bindings(chart, self.variables))
        return self._eliminate_implicit(list(chart), rule)

    def _g_and_dx1(self, x1, chart: list):
        seeded = MultiJet(x1, (1.0,))
        g = ex.evaluate(self.system.g, self.system.bindings([seeded] + chart))
        if not isinstance(g, MultiJet) or g.depth != seeded.depth:
            raise EliminationException(
                f"g does not depend on {self.system.slow_vars[0]}, it cannot be eliminated"
            )
        return g.value, g.gradient[0]

    def _eliminate_implicit(self, chart: list, rule: ImplicitElimination):
        plain = [scalar_part(c) for c in chart]
        start = rule.seed if self._warm_start is None else self._warm_start
        x = np.zeros(np.broadcast_shapes(*(np.shape(c) for c in plain))) + start
        if x.ndim == 0:
            x = float(x)

        for _ in range(rule.max_iter):
            g, dg = self._g_and_dx1(x, plain)
            if np.any(dg == 0.0):
                raise EliminationException(
                    f"Singular dg/d{self.system.slow_vars[0]} during implicit elimination at {plain}"
                )
            step = g / dg
            x = x - step
            if np.all(np.abs(step) <= rule.tol * (1.0 + np.abs(x))):
                break
        else:
            raise EliminationException(
                f"Implicit elimination of {self.system.slow_vars[0]} did not converge in {rule.max_iter} iterations at {plain}"
            )

        if np.ndim(x) == 0:
            self._warm_start = float(x)

        template = max(chart, key=depth)
        if not isinstance(template, Jet):
            return x

        # Newton on the jets themselves, starting from the converged value
        x_jet = lift(x, template)
        chart = _common_depth(chart)
        for _ in range(_JET_NEWTON_STEPS):
            g, dg = self._g_and_dx1(x_jet, chart)
            x_jet = x_jet - g / dg
        return x_jet

    def chart_to_full(self, chart: Sequence[float]) -> list[float]:
        x1 = self.eliminate([float(c) for c in chart])
        return [float(x1)] + [float(c) for c in chart]

    def __call__(self, chart: Sequence) -> list:
        chart = list(chart)
        full = _common_depth([self.eliminate(chart)] + chart)
        g, grad = g_partials(self.system, full)
        f_values = slow_equations(self.system, full)
        p = self.system.p
        return [-(f_values[i] * grad[-1]) for i in range(1, p)] + [
            sum(grad[i] * f_values[i] for i in range(p))
        ]


def reduce(system: SlowFastSystem) -> ReducedField:
    return ReducedField(system)


class FullVectorField:
    """``(f_1, .., f_p, g / eps)`` for integration of the full system"""

    def __init__(self, system: SlowFastSystem):
        if not system.epsilon > 0.0:
            raise ModelException(
                f"Integrating '{system.name}' needs epsilon > 0, got {system.epsilon}"
            )
        self.system = system
        self.variables = system.variables

    def __call__(self, point: Sequence) -> list:
        bindings = self.system.bindings(point)
        return [ex.evaluate(f, bindings) for f in self.system.f] + [
            ex.evaluate(self.system.g, bindings) / self.system.epsilon
        ]


def full_vector_field(system: SlowFastSystem) -> FullVectorField:
    return FullVectorField(system)


class NormalizedSlowField:
    """
    Normalized slow dynamics in full coordinates::

        x_i' = -(dg/dy) f_i        i = 1 .. p
        y'   = sum_i dg/dx_i f_i

    Its equilibria on the critical manifold are the equilibria of the full system.
    """

    def __init__(self, system: SlowFastSystem):
        self.system = system
        self.variables = system.variables

    def __call__(self, point: Sequence) -> list:
        _, grad = g_partials(self.system, point)
        f_values = slow_equations(self.system, point)
        p = self.system.p
        return [-(grad[-1] * f_values[i]) for i in range(p)] + [
            sum(grad[i] * f_values[i] for i in range(p))
        ]


def normalized_slow_field(system: SlowFastSystem) -> NormalizedSlowField:
    return NormalizedSlowField(system)


MODEL_KEYS = {
    "name",
    "slow_vars",
    "fast_var",
    "f",
    "g",
    "epsilon",
    "params",
    "eliminate_x1",
    "implicit",
}


def model_from_dict(data: Mapping[str, Any], default_name: str = "model") -> SlowFastSystem:
    """Build a system from the JSON model schema (see the model-file documentation)"""
    unknown = set(data) - MODEL_KEYS
    if unknown:
        raise ModelException(f"Unknown keys in model definition: {sorted(unknown)}")
    missing = {"slow_vars", "fast_var", "f", "g", "epsilon"} - set(data)
    if missing:
        raise ModelException(f"Model definition is missing the keys {sorted(missing)}")

    slow_vars = data["slow_vars"]
    fast_var = data["fast_var"]
    if (
        not isinstance(slow_vars, (list, tuple))
        or not isinstance(fast_var, str)
        or not all(isinstance(v, str) for v in slow_vars)
    ):
        raise ModelException("'slow_vars' must be a list of names and 'fast_var' a name")
    if not isinstance(data["f"], (list, tuple)) or not all(isinstance(s, str) for s in data["f"]):
        raise ModelException("'f' must be a list of expression strings")
    if not isinstance(data["g"], str):
        raise ModelException("'g' must be an expression string")

    slow_vars = tuple(slow_vars)
    variables = slow_vars + (fast_var,)
    f = _parse_all(data["f"], variables, "f")
    (g,) = _parse_all([data["g"]], variables, "g")

    if data.get("eliminate_x1") is not None:
        if not isinstance(data["eliminate_x1"], str):
            raise ModelException("'eliminate_x1' must be an expression string")
        (elim,) = _parse_all([data["eliminate_x1"]], variables, "eliminate_x1")
        elimination: EliminationRule = ExplicitElimination(elim)
    else:
        implicit = dict(data.get("implicit", {}))
        known = {f.name for f in dataclasses.fields(ImplicitElimination)}
        if set(implicit) - known:
            raise ModelException(
                f"Unknown keys in 'implicit': {sorted(set(implicit) - known)}, known keys are {sorted(known)}"
            )
        elimination = ImplicitElimination(**implicit)

    try:
        params = {str(k): float(v) for k, v in dict(data.get("params", {})).items()}
        epsilon = float(data["epsilon"])
    except (TypeError, ValueError) as e:
        raise ModelException(f"'params' and 'epsilon' must be numbers: {e}") from e

    return SlowFastSystem(
        name=str(data.get("name", default_name)),
        slow_vars=slow_vars,
        fast_var=fast_var,
        f=f,
        g=g,
        epsilon=epsilon,
        elimination=elimination,
        params=params,
    )


def model_to_dict(system: SlowFastSystem) -> dict:
    data = {
        "name": system.name,
        "slow_vars": list(system.slow_vars),
        "fast_var": system.fast_var,
        "f": [ex.to_source(f) for f in system.f],
        "g": ex.to_source(system.g),
        "epsilon": system.epsilon,
        "params": dict(system.params),
    }
    if isinstance(system.elimination, ExplicitElimination):
        data["eliminate_x1"] = ex.to_source(system.elimination.expression)
    else:
        data["implicit"] = dataclasses.asdict(system.elimination)
    return data


def load_model(path: Path) -> SlowFastSystem:
    path = Path(path)
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ExpressionSyntaxException(f"{path}: invalid JSON: {e.msg}", e.lineno, e.colno) from e
    except OSError as e:
        raise ModelException(f"Cannot read model file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ModelException(f"{path}: a model file must contain a JSON object")
    logger.debug(f"Loaded model definition from {path}")
    return model_from_dict(data, default_name=path.stem)


def save_model(system: SlowFastSystem, path: Path) -> None:
    dump_dict_to_file(Path(path), model_to_dict(system))
