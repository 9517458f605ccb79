"""
Scalar expression language used for the right-hand sides of slow-fast systems.

Grammar (EBNF)::

    expression = term , { ( "+" | "-" ) , term } ;
    term       = unary , { ( "*" | "/" ) , unary } ;
    unary      = ( "-" | "+" ) , unary | power ;
    power      = primary , [ "^" , unary ] ;
    primary    = number | name , [ "(" , expression , ")" ] | "(" , expression , ")" ;
    name       = letter , { letter | digit } ;            (* letter includes "_" *)
    number     = digits , [ "." , [ digits ] ] , [ exponent ]
               | "." , digits , [ exponent ] ;
    exponent   = ( "e" | "E" ) , [ "+" | "-" ] , digits ;

``^`` binds tighter than unary minus and is right associative, so ``-x^2`` is ``-(x^2)`` and
``a^b^c`` is ``a^(b^c)``. Function names are ``sin cos exp ln tanh abs sqrt``. Names listed as
variables at parse time become :class:`Variable` nodes, every other name is a :class:`Parameter`.
"""

import math
import re
from dataclasses import dataclass
from typing import Any, Collection, Iterator, Mapping, NamedTuple, Optional, Union

from canardlab import jets
from canardlab.exceptions import (
    DomainException,
    ExpressionSyntaxException,
    UnboundNameException,
    UnknownFunctionException,
)

FUNCTIONS = tuple(jets.ELEMENTARY_FUNCTIONS)


class _Node:
    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class Constant(_Node):
    value: float


@dataclass(frozen=True)
class Variable(_Node):
    name: str


@dataclass(frozen=True)
class Parameter(_Node):
    name: str


@dataclass(frozen=True)
class Negate(_Node):
    operand: "Expr"


@dataclass(frozen=True)
class BinaryOp(_Node):
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call(_Node):
    function: str
    argument: "Expr"


Expr = Union[Constant, Variable, Parameter, Negate, BinaryOp, Call]


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


_TOKEN_SPEC = [
    ("NUMBER", r"(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r"[-+*/^()]"),
    ("NEWLINE", r"\n"),
    ("SKIP", r"[ \t\r]+"),
    ("MISMATCH", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{regex})" for name, regex in _TOKEN_SPEC))


def tokenize(source: str) -> Iterator[Token]:
    line = 1
    line_start = 0
    for match in _TOKEN_RE.finditer(source):
        kind = match.lastgroup
        text = match.group()
        column = match.start() - line_start + 1
        if kind == "NEWLINE":
            line += 1
            line_start = match.end()
        elif kind == "SKIP":
            continue
        elif kind == "MISMATCH":
            raise ExpressionSyntaxException(f"Unexpected character {text!r}", line, column)
        else:
            yield Token(kind, text, line, column)
    yield Token("EOF", "", line, len(source) - line_start + 1)


class _Parser:
    def __init__(self, source: str, variables: Collection[str]):
        self.tokens = list(tokenize(source))
        self.position = 0
        self.variables = frozenset(variables)

    @property
    def current(self) -> Token:
        return self.tokens[self.position]

    def advance(self) -> Token:
        token = self.current
        self.position += 1
        return token

    def error(self, message: str, token: Optional[Token] = None):
        token = self.current if token is None else token
        return ExpressionSyntaxException(message, token.line, token.column)

    def accept(self, text: str) -> bool:
        if self.current.kind == "OP" and self.current.text == text:
            self.position += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            found = self.current.text or "end of input"
            raise self.error(f"Expected {text!r} but found {found!r}")

    def parse(self) -> Expr:
        if self.current.kind == "EOF":
            raise self.error("Empty expression")
        expr = self.expression()
        if self.current.kind != "EOF":
            raise self.error(f"Unexpected token {self.current.text!r}")
        return expr

    def expression(self) -> Expr:
        left = self.term()
        while self.current.kind == "OP" and self.current.text in "+-":
            op = self.advance().text
            left = BinaryOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.current.kind == "OP" and self.current.text in "*/":
            op = self.advance().text
            left = BinaryOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.accept("-"):
            return Negate(self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.accept("^"):
            return BinaryOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        token = self.current
        if token.kind == "NUMBER":
            self.advance()
            return Constant(float(token.text))
        if token.kind == "NAME":
            self.advance()
            if self.accept("("):
                if token.text not in FUNCTIONS:
                    raise UnknownFunctionException(
                        f"Unknown function {token.text!r}, known functions are {', '.join(FUNCTIONS)}",
                        token.line,
                        token.column,
                    )
                argument = self.expression()
                self.expect(")")
                return Call(token.text, argument)
            if token.text in self.variables:
                return Variable(token.text)
            return Parameter(token.text)
        if self.accept("("):
            inner = self.expression()
            self.expect(")")
            return inner
        found = token.text or "end of input"
        raise self.error(f"Unexpected {found!r}, expected a number, name or '('")


def parse(source: str, variables: Collection[str] = ()) -> Expr:
    """Parse ``source`` into an expression tree.

    Args:
        source (str): Expression text in the grammar documented in this module.
        variables (Collection[str]): Names to be treated as state variables.

    Raises:
        ExpressionSyntaxException: With the line and column of the offending token.
        UnknownFunctionException: For calls to functions outside the grammar.
    """
    return _Parser(source, variables).parse()


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEGATE_PRECEDENCE = 3
_ATOM_PRECEDENCE = 5


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _precedence(node: Expr) -> int:
    if isinstance(node, BinaryOp):
        return _PRECEDENCE[node.op]
    if isinstance(node, Negate):
        return _NEGATE_PRECEDENCE
    return _ATOM_PRECEDENCE


def _wrap(node: Expr, minimum: int) -> str:
    text = to_source(node)
    return f"({text})" if _precedence(node) < minimum else text


def to_source(node: Expr) -> str:
    """Print an expression with the minimal parentheses needed to re-parse to the same tree"""
    if isinstance(node, Constant):
        text = _format_number(node.value)
        return f"({text})" if node.value < 0 else text
    if isinstance(node, (Variable, Parameter)):
        return node.name
    if isinstance(node, Negate):
        return "-" + _wrap(node.operand, _NEGATE_PRECEDENCE)
    if isinstance(node, Call):
        return f"{node.function}({to_source(node.argument)})"
    if node.op == "^":
        return f"{_wrap(node.left, _ATOM_PRECEDENCE)}^{_wrap(node.right, _NEGATE_PRECEDENCE)}"
    p = _PRECEDENCE[node.op]
    return f"{_wrap(node.left, p)} {node.op} {_wrap(node.right, p + 1)}"


def names(node: Expr) -> set[str]:
    """All variable and parameter names referenced by ``node``"""
    if isinstance(node, (Variable, Parameter)):
        return {node.name}
    if isinstance(node, Negate):
        return names(node.operand)
    if isinstance(node, Call):
        return names(node.argument)
    if isinstance(node, BinaryOp):
        return names(node.left) | names(node.right)
    return set()


def _integer_exponent(node: Expr) -> Optional[int]:
    sign = 1
    if isinstance(node, Negate):
        node, sign = node.operand, -1
    if isinstance(node, Constant) and node.value.is_integer():
        return sign * int(node.value)
    return None


def evaluate(node: Expr, bindings: Mapping[str, Any]) -> Any:
    """
    Evaluate ``node`` over any number-like type: floats, numpy arrays (element-wise) or jets.
    Integer exponents use repeated multiplication, real exponents go through ``exp(b * ln(a))``.
    """
    if isinstance(node, Constant):
        return node.value
    if isinstance(node, (Variable, Parameter)):
        try:
            return bindings[node.name]
        except KeyError:
            raise UnboundNameException(f"Unbound name {node.name!r}") from None
    if isinstance(node, Negate):
        return -evaluate(node.operand, bindings)
    if isinstance(node, Call):
        return jets.ELEMENTARY_FUNCTIONS[node.function](
            evaluate(node.argument, bindings)
        )

    left = evaluate(node.left, bindings)
    if node.op == "^":
        n = _integer_exponent(node.right)
        if n is not None:
            return jets.integer_power(left, n)
        return jets.exp(evaluate(node.right, bindings) * jets.log(left))

    right = evaluate(node.right, bindings)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    return jets.divide(left, right)


def eval_real(node: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate ``node`` in double precision.

    Raises:
        UnboundNameException: If a referenced name has no binding.
        DomainException: For ln of non-positive values, division by zero or non-finite results.
    """
    try:
        value = float(evaluate(node, bindings))
    except (OverflowError, ZeroDivisionError) as e:
        raise DomainException(f"Evaluation of '{node}' failed: {e}") from e
    if not math.isfinite(value):
        raise DomainException(f"Evaluation of '{node}' produced {value}")
    return value


def eval_jet(node: Expr, bindings: Mapping[str, Any]) -> jets.Jet:
    """Evaluate ``node`` over jets.

    All jet bindings must share order, mode and dimension. The result is always a jet, constants
    are returned with a vanishing derivative part.

    Raises:
        JetShapeException: If jets of different shape meet.
        DomainException: As in :func:`eval_real`.
    """
    template = None
    for name in sorted(names(node)):
        value = bindings.get(name)
        if isinstance(value, jets.Jet) and (
            template is None or value.depth > template.depth
        ):
            template = value
    if template is None:
        template = next((v for v in bindings.values() if isinstance(v, jets.Jet)), None)
    if template is None:
        raise ValueError("eval_jet needs at least one jet binding")

    result = jets.lift(evaluate(node, bindings), template)
    if not jets.all_finite(result):
        raise DomainException(f"Evaluation of '{node}' produced non-finite jet coefficients")
    return result
