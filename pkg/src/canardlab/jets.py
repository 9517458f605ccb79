"""
Truncated Taylor objects ("jets") with exact derivative propagation.

Two kinds of jets are provided:

- :class:`TaylorJet`: a univariate series ``c_0 + c_1 t + ... + c_k t^k`` in a single
  (time-like) variable. Coefficients are stored with the halved-coefficient convention,
  i.e. ``c_j = x^{(j)} / j!``.
- :class:`MultiJet`: value, gradient and (optionally) Hessian of a quantity with respect to
  ``d`` seeded directions.

Coefficients may be plain floats, numpy arrays (evaluated element-wise, used for batched
evaluation) or other jets, which allows nesting, e.g. a ``MultiJet`` whose entries are
``TaylorJet`` objects. Every jet carries a ``depth`` (floats and arrays have depth 0). In a binary
operation the deeper operand treats the shallower one as a constant coefficient, two jets of
equal depth must have identical shape.
"""

import abc
import functools
import math
import operator
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from canardlab.exceptions import DomainException, JetShapeException


def depth(x: Any) -> int:
    return x.depth if isinstance(x, Jet) else 0


_depth = depth


def lift(x: Any, template: Any):
    """Embed ``x`` as a constant into the jet type of ``template`` when ``x`` is shallower"""
    if isinstance(template, Jet) and depth(x) < template.depth:
        return template.constant(x)
    return x


def scalar_part(x: Any):
    """Strip all jet layers and return the underlying float (or array)"""
    while isinstance(x, Jet):
        x = x.value
    return x


def all_finite(x: Any) -> bool:
    if isinstance(x, Jet):
        return all(all_finite(p) for p in x.parts())
    return bool(np.all(np.isfinite(x)))


def _is_coefficient(x: Any) -> bool:
    return isinstance(x, (int, float, np.ndarray, np.number)) and not isinstance(
        x, bool
    )


def _dot(xs: Iterable, ys: Iterable):
    return functools.reduce(operator.add, map(operator.mul, xs, ys))


def _require(condition, message: str) -> None:
    if not np.all(condition):
        raise DomainException(message)


class Jet(abc.ABC):
    """Common operator plumbing of all jet types"""

    # numpy must hand mixed array/jet operations back to the jet
    __array_ufunc__ = None

    depth: int = 1

    @property
    @abc.abstractmethod
    def value(self): ...

    @abc.abstractmethod
    def parts(self) -> tuple: ...

    @abc.abstractmethod
    def same_shape(self, other: "Jet") -> bool: ...

    @abc.abstractmethod
    def constant(self, c) -> "Jet":
        """A jet of the same shape as self with value ``c`` and vanishing derivative part"""
        ...

    @abc.abstractmethod
    def _add(self, other: "Jet") -> "Jet": ...

    @abc.abstractmethod
    def _mul(self, other: "Jet") -> "Jet": ...

    @abc.abstractmethod
    def _div(self, other: "Jet") -> "Jet": ...

    @abc.abstractmethod
    def __neg__(self) -> "Jet": ...

    @abc.abstractmethod
    def exp(self) -> "Jet": ...

    @abc.abstractmethod
    def log(self) -> "Jet": ...

    @abc.abstractmethod
    def sin(self) -> "Jet": ...

    @abc.abstractmethod
    def cos(self) -> "Jet": ...

    @abc.abstractmethod
    def tanh(self) -> "Jet": ...

    @abc.abstractmethod
    def sqrt(self) -> "Jet": ...

    def _coerce(self, other) -> Optional["Jet"]:
        if isinstance(other, Jet):
            if other.depth > self.depth:
                return None
            if other.depth == self.depth:
                if not self.same_shape(other):
                    raise JetShapeException(
                        f"Mixed jet shapes: {self.describe()} and {other.describe()}"
                    )
                return other
            return self.constant(other)
        if _is_coefficient(other):
            return self.constant(other)
        return None

    def describe(self) -> str:
        return type(self).__name__

    def __add__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else self._add(o)

    def __radd__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else o._add(self)

    def __sub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else self._add(-o)

    def __rsub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else o._add(-self)

    def __mul__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else self._mul(o)

    def __rmul__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else o._mul(self)

    def __truediv__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else self._div(o)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is None else o._div(self)

    def __pos__(self):
        return self

    def __pow__(self, n):
        if not isinstance(n, int):
            return NotImplemented
        return integer_power(self, n)

    def __abs__(self):
        s = scalar_part(self.value)
        sign = np.where(s < 0, -1.0, 1.0) if isinstance(s, np.ndarray) else (
            -1.0 if s < 0 else 1.0
        )
        return self * sign


class TaylorJet(Jet):
    """
    Univariate truncated Taylor series.

    Args:
        coefficients (Sequence): ``c_0 .. c_k`` with ``c_j = x^{(j)} / j!``
    """

    def __init__(self, coefficients: Sequence, depth: Optional[int] = None):
        self.coefficients = tuple(coefficients)
        if len(self.coefficients) == 0:
            raise ValueError("A TaylorJet needs at least one coefficient")
        self.depth = 1 + _depth(self.coefficients[0]) if depth is None else depth

    @classmethod
    def variable(cls, value, order: int) -> "TaylorJet":
        return cls(((value, 1.0) + (0.0,) * (order - 1))[: order + 1])

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    @property
    def value(self):
        return self.coefficients[0]

    def parts(self) -> tuple:
        return self.coefficients

    def derivatives(self) -> list:
        """Return ``[x, x', x'', ...]``, i.e. the coefficients multiplied by ``j!``"""
        return [c * float(math.factorial(j)) for j, c in enumerate(self.coefficients)]

    def same_shape(self, other: Jet) -> bool:
        return isinstance(other, TaylorJet) and other.order == self.order

    def describe(self) -> str:
        return f"TaylorJet(order={self.order})"

    def constant(self, c) -> "TaylorJet":
        return TaylorJet((c,) + (0.0,) * self.order, depth=self.depth)

    def __repr__(self) -> str:
        return f"TaylorJet({list(self.coefficients)})"

    def _add(self, other: "TaylorJet") -> "TaylorJet":
        return TaylorJet(a + b for a, b in zip(self.coefficients, other.coefficients))

    def __neg__(self) -> "TaylorJet":
        return TaylorJet(-a for a in self.coefficients)

    def _mul(self, other: "TaylorJet") -> "TaylorJet":
        a, b = self.coefficients, other.coefficients
        return TaylorJet(_dot(a[: k + 1], b[k::-1]) for k in range(len(a)))

    def _div(self, other: "TaylorJet") -> "TaylorJet":
        a, b = self.coefficients, other.coefficients
        _require(scalar_part(b[0]) != 0, "Division by zero")
        q = []
        for k in range(len(a)):
            acc = a[k]
            for i in range(1, k + 1):
                acc = acc - b[i] * q[k - i]
            q.append(acc / b[0])
        return TaylorJet(q)

    def exp(self) -> "TaylorJet":
        a = self.coefficients
        e = [exp(a[0])]
        for k in range(1, len(a)):
            e.append(_dot((j * a[j] for j in range(1, k + 1)), e[k - 1 :: -1]) / k)
        return TaylorJet(e)

    def log(self) -> "TaylorJet":
        a = self.coefficients
        l = [log(a[0])]
        for k in range(1, len(a)):
            acc = a[k]
            for j in range(1, k):
                acc = acc - (j * l[j] * a[k - j]) / k
            l.append(acc / a[0])
        return TaylorJet(l)

    def _sin_cos(self) -> tuple["TaylorJet", "TaylorJet"]:
        a = self.coefficients
        s, c = [sin(a[0])], [cos(a[0])]
        for k in range(1, len(a)):
            da = [j * a[j] for j in range(1, k + 1)]
            s.append(_dot(da, c[k - 1 :: -1]) / k)
            c.append(-_dot(da, s[k - 1 :: -1]) / k)
        return TaylorJet(s), TaylorJet(c)

    def sin(self) -> "TaylorJet":
        return self._sin_cos()[0]

    def cos(self) -> "TaylorJet":
        return self._sin_cos()[1]

    def tanh(self) -> "TaylorJet":
        a = self.coefficients
        t = [tanh(a[0])]
        # w = 1 - tanh^2, the derivative of tanh
        w = [1.0 - t[0] * t[0]]
        for k in range(1, len(a)):
            t.append(_dot((j * a[j] for j in range(1, k + 1)), w[k - 1 :: -1]) / k)
            w.append(-_dot(t[: k + 1], t[k::-1]))
        return TaylorJet(t)

    def sqrt(self) -> "TaylorJet":
        a = self.coefficients
        s = [sqrt(a[0])]
        if len(a) > 1:
            _require(scalar_part(s[0]) != 0, "sqrt is not differentiable at 0")
        for k in range(1, len(a)):
            acc = a[k]
            for j in range(1, k):
                acc = acc - s[j] * s[k - j]
            s.append(acc / (2.0 * s[0]))
        return TaylorJet(s)


class MultiJet(Jet):
    """
    Value, gradient and optional Hessian with respect to ``d`` seeded directions.

    A jet with ``hessian=None`` is of order 1, otherwise of order 2. The Hessian is kept as a full
    (symmetric) ``d x d`` nested tuple.
    """

    def __init__(
        self,
        value,
        gradient: Sequence,
        hessian: Optional[Sequence] = None,
        depth: Optional[int] = None,
    ):
        self._value = value
        self.gradient = tuple(gradient)
        self.hessian = None if hessian is None else tuple(tuple(r) for r in hessian)
        self.depth = 1 + _depth(value) if depth is None else depth

    @classmethod
    def seed(cls, values: Sequence, order: int = 1) -> list["MultiJet"]:
        """Independent variables ``x_i`` with unit gradient ``e_i``"""
        if order not in (1, 2):
            raise ValueError(f"MultiJet order must be 1 or 2, got {order}")
        d = len(values)
        zero_hessian = tuple((0.0,) * d for _ in range(d)) if order == 2 else None
        return [
            cls(v, tuple(1.0 if j == i else 0.0 for j in range(d)), zero_hessian)
            for i, v in enumerate(values)
        ]

    @property
    def value(self):
        return self._value

    @property
    def dimension(self) -> int:
        return len(self.gradient)

    @property
    def order(self) -> int:
        return 1 if self.hessian is None else 2

    def parts(self) -> tuple:
        rows = () if self.hessian is None else tuple(x for r in self.hessian for x in r)
        return (self._value,) + self.gradient + rows

    def same_shape(self, other: Jet) -> bool:
        return (
            isinstance(other, MultiJet)
            and other.dimension == self.dimension
            and other.order == self.order
        )

    def describe(self) -> str:
        return f"MultiJet(dimension={self.dimension}, order={self.order})"

    def constant(self, c) -> "MultiJet":
        d = self.dimension
        hessian = None if self.hessian is None else tuple((0.0,) * d for _ in range(d))
        return MultiJet(c, (0.0,) * d, hessian, depth=self.depth)

    def __repr__(self) -> str:
        return f"MultiJet(value={self._value!r}, gradient={list(self.gradient)!r}, hessian={self.hessian!r})"

    def _symmetric(self, entry) -> Optional[tuple]:
        if self.hessian is None:
            return None
        d = self.dimension
        upper = {(i, j): entry(i, j) for i in range(d) for j in range(i, d)}
        return tuple(
            tuple(upper[(min(i, j), max(i, j))] for j in range(d)) for i in range(d)
        )

    def _add(self, other: "MultiJet") -> "MultiJet":
        return MultiJet(
            self._value + other._value,
            (a + b for a, b in zip(self.gradient, other.gradient)),
            self._symmetric(lambda i, j: self.hessian[i][j] + other.hessian[i][j]),
        )

    def __neg__(self) -> "MultiJet":
        return MultiJet(
            -self._value,
            (-a for a in self.gradient),
            self._symmetric(lambda i, j: -self.hessian[i][j]),
        )

    def _mul(self, other: "MultiJet") -> "MultiJet":
        a, b = self._value, other._value
        ga, gb = self.gradient, other.gradient
        return MultiJet(
            a * b,
            (a * y + b * x for x, y in zip(ga, gb)),
            self._symmetric(
                lambda i, j: a * other.hessian[i][j]
                + b * self.hessian[i][j]
                + ga[i] * gb[j]
                + gb[i] * ga[j]
            ),
        )

    def _compose(self, f0, f1, f2=None) -> "MultiJet":
        """Chain rule for a scalar function with value f0, first derivative f1 and second derivative f2"""
        g = self.gradient
        return MultiJet(
            f0,
            (f1 * x for x in g),
            self._symmetric(lambda i, j: f1 * self.hessian[i][j] + f2 * g[i] * g[j]),
        )

    def reciprocal(self) -> "MultiJet":
        _require(scalar_part(self._value) != 0, "Division by zero")
        r = 1.0 / self._value
        r2 = r * r
        return self._compose(r, -r2, None if self.hessian is None else 2.0 * r2 * r)

    def _div(self, other: "MultiJet") -> "MultiJet":
        return self._mul(other.reciprocal())

    def exp(self) -> "MultiJet":
        e = exp(self._value)
        return self._compose(e, e, e)

    def log(self) -> "MultiJet":
        v = self._value
        f0 = log(v)
        r = 1.0 / v
        return self._compose(f0, r, None if self.hessian is None else -(r * r))

    def sin(self) -> "MultiJet":
        s, c = sin(self._value), cos(self._value)
        return self._compose(s, c, -s)

    def cos(self) -> "MultiJet":
        s, c = sin(self._value), cos(self._value)
        return self._compose(c, -s, -c)

    def tanh(self) -> "MultiJet":
        t = tanh(self._value)
        d1 = 1.0 - t * t
        return self._compose(t, d1, -2.0 * t * d1)

    def sqrt(self) -> "MultiJet":
        s = sqrt(self._value)
        _require(scalar_part(s) != 0, "sqrt is not differentiable at 0")
        d1 = 0.5 / s
        return self._compose(
            s, d1, None if self.hessian is None else -d1 / (2.0 * self._value)
        )


def _scalar_result(x, name: str):
    _require(np.isfinite(x), f"{name} produced a non-finite value")
    return x


def exp(x):
    if isinstance(x, Jet):
        return x.exp()
    with np.errstate(over="ignore"):
        return _scalar_result(np.exp(x), "exp")


def log(x):
    if isinstance(x, Jet):
        return x.log()
    _require(np.asarray(x) > 0, "ln of a non-positive value")
    return np.log(x)


def sin(x):
    return x.sin() if isinstance(x, Jet) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Jet) else np.cos(x)


def tanh(x):
    return x.tanh() if isinstance(x, Jet) else np.tanh(x)


def sqrt(x):
    if isinstance(x, Jet):
        return x.sqrt()
    _require(np.asarray(x) >= 0, "sqrt of a negative value")
    return np.sqrt(x)


def absolute(x):
    return abs(x)


def divide(a, b):
    if not isinstance(b, Jet):
        _require(np.asarray(b) != 0, "Division by zero")
    return a / b


def integer_power(x, n: int):
    """``x**n`` by repeated squaring, exact for small polynomial powers"""
    if n < 0:
        return divide(1.0, integer_power(x, -n))
    if n == 0:
        return x * 0.0 + 1.0
    result = None
    while n:
        if n & 1:
            result = x if result is None else result * x
        n >>= 1
        if n:
            x = x * x
    return result


ELEMENTARY_FUNCTIONS = {
    "sin": sin,
    "cos": cos,
    "exp": exp,
    "ln": log,
    "tanh": tanh,
    "abs": absolute,
    "sqrt": sqrt,
}
