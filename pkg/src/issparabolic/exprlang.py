"""A small expression language for scalar functions of (r, t, u).

Grammar (whitespace-insensitive):

    expr   :=  term  (('+' | '-') term)*
    term   :=  factor (('*' | '/') factor)*
    factor :=  '-' factor | power
    power  :=  atom ['^' factor]            # right-associative, binds tightest
    atom   :=  NUMBER | 'r' | 't' | 'u' | FN '(' expr ')' | '(' expr ')'
    FN     :=  sin | cos | exp | ln | abs | sqrt | tanh

Parsed expressions are immutable trees with structural equality.
``evaluate`` accepts floats or numpy arrays as bindings (arrays broadcast),
and guarantees a finite result or a domain error -- never a silent NaN.
``derivative`` returns an exact symbolic derivative with constant folding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("r", "t", "u")
FUNCTIONS = ("sin", "cos", "exp", "ln", "abs", "sqrt", "tanh")


class ExprError(Exception):
    """Base class for all expression-language errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"syntax error at offset {offset}: {message}")
        self.offset = offset


class ExprNameError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ExprEvalError(ExprError):
    """Evaluation failure that is not a numeric domain problem (e.g. unbound variable)."""


class ExprDomainError(ExprEvalError):
    """ln/sqrt outside their domain, division by zero, overflow, or a non-finite result."""


class Expression:
    """Base node type; concrete nodes are frozen dataclasses below."""

    __slots__ = ()


@dataclass(frozen=True)
class Num(Expression):
    value: float


@dataclass(frozen=True)
class Var(Expression):
    name: str


@dataclass(frozen=True)
class Neg(Expression):
    arg: Expression


@dataclass(frozen=True)
class Add(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Sub(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Mul(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Div(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: Expression


@dataclass(frozen=True)
class Call(Expression):
    func: str
    arg: Expression


@dataclass(frozen=True)
class InverseImage(Expression):
    """Programmatic-only node: the inverse of a strictly increasing map applied
    to the value of ``arg``.  Not reachable from the text grammar; used to
    route boundary data through the inverse of the boundary nonlinearity.
    Evaluation is scalar-only and delegates to the root finder."""

    monotone: Expression  # strictly increasing expression in u with value 0 at 0
    arg: Expression


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        m = _NUMBER_RE.match(text, i)
        if m:
            tokens.append(("num", float(m.group(0)), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(("ident", m.group(0), i))
            i = m.end()
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.peek()
        if tok[0] != kind:
            raise ExprSyntaxError(f"expected {kind!r}", tok[2])
        return self.advance()

    def parse(self) -> Expression:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError("expected end of input or an operator", tok[2])
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expression:
        node = self.factor()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            rhs = self.factor()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def factor(self) -> Expression:
        if self.peek()[0] == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            return Pow(base, self.factor())
        return base

    def atom(self) -> Expression:
        kind, value, offset = self.peek()
        if kind == "num":
            self.advance()
            return Num(value)
        if kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            self.advance()
            if self.peek()[0] == "(":
                if value not in FUNCTIONS:
                    raise ExprNameError(value, offset)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if value in VARIABLES:
                return Var(value)
            raise ExprNameError(value, offset)
        raise ExprSyntaxError("expected a number, variable, function or '('", offset)


def parse(text: str) -> Expression:
    """Parse ``text`` into an expression tree."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty input", 0)
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Expression) -> int:
    if isinstance(node, (Add, Sub)):
        return _PREC_ADD
    if isinstance(node, (Mul, Div)):
        return _PREC_MUL
    if isinstance(node, Neg):
        return _PREC_NEG
    if isinstance(node, Pow):
        return _PREC_POW
    return _PREC_ATOM


def _wrap(node: Expression, needs_parens: bool) -> str:
    text = to_text(node)
    return f"({text})" if needs_parens else text


def to_text(node: Expression) -> str:
    """Render an expression so that parsing it back gives a structurally
    equal tree (for trees whose literals are non-negative, as produced by
    ``parse``)."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + _wrap(node.arg, _prec(node.arg) <= _PREC_NEG)
    if isinstance(node, Add):
        return f"{_wrap(node.left, _prec(node.left) < _PREC_ADD)} + {_wrap(node.right, _prec(node.right) <= _PREC_ADD)}"
    if isinstance(node, Sub):
        return f"{_wrap(node.left, _prec(node.left) < _PREC_ADD)} - {_wrap(node.right, _prec(node.right) <= _PREC_ADD)}"
    if isinstance(node, Mul):
        return f"{_wrap(node.left, _prec(node.left) < _PREC_MUL)}*{_wrap(node.right, _prec(node.right) <= _PREC_MUL)}"
    if isinstance(node, Div):
        return f"{_wrap(node.left, _prec(node.left) < _PREC_MUL)}/{_wrap(node.right, _prec(node.right) <= _PREC_MUL)}"
    if isinstance(node, Pow):
        return f"{_wrap(node.base, _prec(node.base) <= _PREC_POW)}^{_wrap(node.exponent, _prec(node.exponent) < _PREC_NEG)}"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    if isinstance(node, InverseImage):
        return f"<inverse of {to_text(node.monotone)} at {to_text(node.arg)}>"
    raise TypeError(f"not an expression node: {node!r}")


def variables(node: Expression) -> frozenset:
    """Set of variable names occurring in the tree."""
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, (Num,)):
        return frozenset()
    if isinstance(node, Neg):
        return variables(node.arg)
    if isinstance(node, (Add, Sub, Mul, Div)):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Pow):
        return variables(node.base) | variables(node.exponent)
    if isinstance(node, Call):
        return variables(node.arg)
    if isinstance(node, InverseImage):
        return variables(node.arg)
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_NUMPY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
}


def _eval(node, bindings):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return bindings[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, bindings)
    if isinstance(node, Add):
        return _eval(node.left, bindings) + _eval(node.right, bindings)
    if isinstance(node, Sub):
        return _eval(node.left, bindings) - _eval(node.right, bindings)
    if isinstance(node, Mul):
        return _eval(node.left, bindings) * _eval(node.right, bindings)
    if isinstance(node, Div):
        num = _eval(node.left, bindings)
        den = _eval(node.right, bindings)
        if np.any(np.asarray(den) == 0):
            raise ExprDomainError(f"division by zero in {to_text(node)!r}")
        return num / den
    if isinstance(node, Pow):
        base = _eval(node.base, bindings)
        expo = _eval(node.exponent, bindings)
        base_a, expo_a = np.asarray(base, dtype=float), np.asarray(expo, dtype=float)
        fractional = expo_a != np.floor(expo_a)
        if np.any((base_a < 0) & fractional):
            raise ExprDomainError(
                f"negative base with non-integer exponent in {to_text(node)!r}"
            )
        if np.any((base_a == 0) & (expo_a < 0)):
            raise ExprDomainError(f"zero base with negative exponent in {to_text(node)!r}")
        return np.power(base, expo)
    if isinstance(node, Call):
        arg = _eval(node.arg, bindings)
        if node.func == "ln" and np.any(np.asarray(arg) <= 0):
            raise ExprDomainError(f"ln of a non-positive value in {to_text(node)!r}")
        if node.func == "sqrt" and np.any(np.asarray(arg) < 0):
            raise ExprDomainError(f"sqrt of a negative value in {to_text(node)!r}")
        return _NUMPY_FUNCS[node.func](arg)
    if isinstance(node, InverseImage):
        from .problem import invert_psi  # local import; problem builds on exprlang

        y = _eval(node.arg, bindings)
        if np.ndim(y) != 0:
            raise ExprEvalError("inverse-image nodes evaluate scalars only")
        return invert_psi(node.monotone, float(y), tol=1e-13)
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(node: Expression, bindings: dict):
    """Evaluate the tree at the given bindings.

    Bindings map variable names to floats or numpy arrays; array bindings
    broadcast together.  Returns a float for all-scalar bindings, else an
    array.  Raises ExprEvalError for unbound variables and ExprDomainError
    for out-of-domain arguments or non-finite results.
    """
    missing = variables(node) - set(bindings)
    if missing:
        raise ExprEvalError(f"unbound variable(s): {', '.join(sorted(missing))}")
    with np.errstate(all="ignore"):
        out = _eval(node, bindings)
    if not np.all(np.isfinite(out)):
        raise ExprDomainError(f"non-finite result when evaluating {to_text(node)!r}")
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# Symbolic differentiation (constant folding only, no deeper simplification)
# ---------------------------------------------------------------------------

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _is_num(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def _add(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Add(a, b)


def _sub(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return _ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return Mul(a, b)


def _div(a, b):
    if _is_num(a, 0.0):
        return _ZERO
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b) and b.value != 0:
        return Num(a.value / b.value)
    return Div(a, b)


def _pow(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return _ONE
    return Pow(a, b)


def derivative(node: Expression, var: str) -> Expression:
    """Exact symbolic derivative with respect to ``var`` (one of r, t, u)."""
    if var not in VARIABLES:
        raise ValueError(f"unknown variable {var!r}")
    return _diff(node, var)


def _diff(node, var):
    if isinstance(node, Num):
        return _ZERO
    if isinstance(node, Var):
        return _ONE if node.name == var else _ZERO
    if isinstance(node, Neg):
        return _neg(_diff(node.arg, var))
    if isinstance(node, Add):
        return _add(_diff(node.left, var), _diff(node.right, var))
    if isinstance(node, Sub):
        return _sub(_diff(node.left, var), _diff(node.right, var))
    if isinstance(node, Mul):
        return _add(
            _mul(_diff(node.left, var), node.right),
            _mul(node.left, _diff(node.right, var)),
        )
    if isinstance(node, Div):
        return _div(
            _sub(
                _mul(_diff(node.left, var), node.right),
                _mul(node.left, _diff(node.right, var)),
            ),
            _pow(node.right, Num(2.0)),
        )
    if isinstance(node, Pow):
        base, expo = node.base, node.exponent
        dbase, dexpo = _diff(base, var), _diff(expo, var)
        if _is_num(expo):
            # d(f^c) = c f^(c-1) f'
            return _mul(_mul(expo, _pow(base, Num(expo.value - 1.0))), dbase)
        if _is_num(dexpo, 0.0) and _is_num(dbase, 0.0):
            return _ZERO
        # General case: f^g (g' ln f + g f'/f); needs f > 0 at evaluation.
        return _mul(
            Pow(base, expo),
            _add(_mul(dexpo, Call("ln", base)), _div(_mul(expo, dbase), base)),
        )
    if isinstance(node, Call):
        inner = _diff(node.arg, var)
        if _is_num(inner, 0.0):
            return _ZERO
        f, g = node.func, node.arg
        if f == "sin":
            outer = Call("cos", g)
        elif f == "cos":
            outer = _neg(Call("sin", g))
        elif f == "exp":
            outer = Call("exp", g)
        elif f == "ln":
            return _div(inner, g)
        elif f == "sqrt":
            return _div(inner, _mul(Num(2.0), Call("sqrt", g)))
        elif f == "tanh":
            outer = _sub(_ONE, _pow(Call("tanh", g), Num(2.0)))
        elif f == "abs":
            # sign(g) g' away from g = 0; evaluating at g = 0 is a domain error.
            return _div(_mul(g, inner), Call("abs", g))
        else:  # pragma: no cover - FUNCTIONS is closed
            raise TypeError(f"unknown function {f!r}")
        return _mul(outer, inner)
    if isinstance(node, InverseImage):
        raise ExprEvalError("inverse-image nodes are not symbolically differentiable")
    raise TypeError(f"not an expression node: {node!r}")
