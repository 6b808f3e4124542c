"""Scalar expressions over chart coordinates.

Expressions are hash-consed immutable trees: structurally equal trees are the
same Python object, so derivative and evaluation caches can key on identity.
Only constant folding (including the additive/multiplicative identities) is
performed; there is no general simplifier.
"""

from __future__ import annotations

import math
import re
import threading
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr",
    "ExprError",
    "ParseError",
    "UnknownIdentifierError",
    "DomainError",
    "const",
    "var",
    "parse",
    "differentiate",
    "evaluate",
    "evaluate_many",
    "substitute",
    "to_string",
    "FUNCTIONS",
    "ZERO",
    "ONE",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")
_BINARY = ("add", "sub", "mul", "div")


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax error; ``offset`` is the byte offset into the source text."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int, text: str = ""):
        self.name = name
        super().__init__(f"unknown identifier {name!r}", offset, text)


class DomainError(ExprError, ArithmeticError):
    def __init__(self, message: str, node: "Expr"):
        self.node = node
        super().__init__(f"{message}: {to_string(node)}")


class Expr:
    """A node of an expression tree. Build with the module helpers or operators."""

    __slots__ = ("op", "args", "value", "_hash", "_dcache", "__weakref__")

    op: str
    args: tuple["Expr", ...]
    value: object

    def __init__(self, *a, **k):
        raise TypeError("use const(), var(), parse() or arithmetic operators")

    def __setattr__(self, name, value):
        raise AttributeError("expression nodes are immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    def free_vars(self) -> frozenset[str]:
        seen: set[int] = set()
        names: set[str] = set()
        stack = [self]
        while stack:
            n = stack.pop()
            if id(n) in seen:
                continue
            seen.add(id(n))
            if n.op == "var":
                names.add(n.value)
            stack.extend(n.args)
        return frozenset(names)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        if isinstance(p, Expr):
            if not p.is_const:
                raise ExprError("exponent must be a constant")
            p = p.value
        return power(self, float(p))


_TABLE: dict[tuple, Expr] = {}
_LOCK = threading.Lock()


def _make(op: str, args: tuple[Expr, ...] = (), value=None) -> Expr:
    key = (op, value, tuple(id(a) for a in args))
    node = _TABLE.get(key)
    if node is not None:
        return node
    with _LOCK:
        node = _TABLE.get(key)
        if node is None:
            node = object.__new__(Expr)
            for name, v in (("op", op), ("args", args), ("value", value), ("_hash", hash(key)), ("_dcache", {})):
                object.__setattr__(node, name, v)
            _TABLE[key] = node
    return node


def const(value: float) -> Expr:
    v = float(value)
    if v == 0.0:
        v = 0.0  # fold -0.0
    return _make("const", (), v)


def var(name: str) -> Expr:
    return _make("var", (), str(name))


ZERO = const(0.0)
ONE = const(1.0)


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return const(float(x))
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


def _is(e: Expr, v: float) -> bool:
    return e.op == "const" and e.value == v


def add(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if b.op == "neg":
        return sub(a, b.args[0])
    return _make("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if a is b:
        return ZERO
    if b.op == "neg":
        return add(a, b.args[0])
    return _make("sub", (a, b))


def neg(a: Expr) -> Expr:
    if a.is_const:
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    return _make("neg", (a,))


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return _make("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        raise DomainError("division by zero", _make("div", (a, b)))
    if a.is_const and b.is_const:
        return const(a.value / b.value)
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    if _is(b, -1.0):
        return neg(a)
    return _make("div", (a, b))


def power(a: Expr, p: float) -> Expr:
    p = float(p)
    if p == 0.0:
        return ONE
    if p == 1.0:
        return a
    if a.is_const:
        try:
            v = _pow_scalar(a.value, p)
        except (ZeroDivisionError, ValueError):
            v = None
        if v is not None and math.isfinite(v):
            return const(v)
    return _make("pow", (a,), p)


def _pow_scalar(base: float, p: float) -> float:
    if p.is_integer():
        return float(base ** int(p))
    if base < 0:
        raise ValueError("negative base")
    return math.pow(base, p)


_SCALAR_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
}


def call(name: str, a: Expr) -> Expr:
    if name not in _SCALAR_FUNCS:
        raise ExprError(f"unknown function {name!r}")
    if a.is_const:
        try:
            v = _SCALAR_FUNCS[name](a.value)
        except (ValueError, OverflowError):
            v = None
        if v is not None and math.isfinite(v):
            return const(v)
    return _make(name, (a,))


def sin(a):
    return call("sin", _coerce(a))


def cos(a):
    return call("cos", _coerce(a))


def tan(a):
    return call("tan", _coerce(a))


def exp(a):
    return call("exp", _coerce(a))


def log(a):
    return call("log", _coerce(a))


def sqrt(a):
    return call("sqrt", _coerce(a))


def esum(terms: Iterable[Expr]) -> Expr:
    total = ZERO
    for t in terms:
        total = add(total, t)
    return total


# ----------------------------------------------------------------------
# Lexer / parser
# ----------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    raw = text.encode("utf-8")
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            offset = len(text[:pos].encode("utf-8"))
            raise ParseError(f"unexpected character {text[pos]!r}", offset, text)
        kind = m.lastgroup
        if kind != "ws":
            offset = len(text[: m.start()].encode("utf-8"))
            tokens.append((kind, m.group(), offset))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text: str, coords: Sequence[str]):
        self.text = text
        self.coords = set(coords)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, offset = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", offset, self.text)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", offset, self.text)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.term()
            left = add(left, right) if op == "+" else sub(left, right)
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.factor()
            if op == "*":
                left = mul(left, right)
            else:
                if _is(right, 0.0):
                    raise ParseError("division by literal zero", self.tokens[self.i - 1][2], self.text)
                left = div(left, right)
        return left

    def factor(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return neg(self.power())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            offset = self.take()[2]
            exponent = self.atom()
            if not exponent.is_const:
                raise ParseError("exponent must be a constant", offset, self.text)
            return power(base, exponent.value)
        return base

    def atom(self) -> Expr:
        kind, text, offset = self.take()
        if kind == "number":
            return const(float(text))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(text, offset, self.text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return call(text, arg)
            if text in self.coords:
                return var(text)
            if text == "pi":
                return const(math.pi)
            raise UnknownIdentifierError(text, offset, self.text)
        if (kind, text) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"expected a number, identifier or '(', found {found}", offset, self.text)


def parse(text: str, coords: Sequence[str]) -> Expr:
    """Parse ``text`` into an expression over the coordinate names ``coords``."""
    for c in coords:
        if c in FUNCTIONS or c == "pi":
            raise ExprError(f"coordinate name {c!r} clashes with a builtin")
    return _Parser(text, coords).parse()


# ----------------------------------------------------------------------
# Differentiation
# ----------------------------------------------------------------------


def differentiate(e: Expr, coord: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``coord``."""
    cached = e._dcache.get(coord)
    if cached is not None:
        return cached
    d = _derive(e, coord)
    e._dcache[coord] = d
    return d


def _derive(e: Expr, x: str) -> Expr:
    op = e.op
    if op == "const":
        return ZERO
    if op == "var":
        return ONE if e.value == x else ZERO
    if op in ("add", "sub"):
        a, b = e.args
        da, db = differentiate(a, x), differentiate(b, x)
        return add(da, db) if op == "add" else sub(da, db)
    if op == "neg":
        return neg(differentiate(e.args[0], x))
    if op == "mul":
        a, b = e.args
        return add(mul(differentiate(a, x), b), mul(a, differentiate(b, x)))
    if op == "div":
        a, b = e.args
        da, db = differentiate(a, x), differentiate(b, x)
        return sub(div(da, b), div(mul(a, db), mul(b, b)))
    a = e.args[0]
    da = differentiate(a, x)
    if da is ZERO:
        return ZERO
    if op == "pow":
        p = e.value
        if p.is_integer():
            return mul(mul(const(p), power(a, p - 1.0)), da)
        # a^p = exp(p log a): derivative p a^p a'/a, valid for a > 0 only
        return mul(const(p), div(mul(e, da), a))
    if op == "sin":
        return mul(cos(a), da)
    if op == "cos":
        return neg(mul(sin(a), da))
    if op == "tan":
        c = cos(a)
        return div(da, mul(c, c))
    if op == "exp":
        return mul(e, da)
    if op == "log":
        return div(da, a)
    if op == "sqrt":
        return div(da, mul(const(2.0), e))
    raise ExprError(f"cannot differentiate node {op!r}")


# ----------------------------------------------------------------------
# Substitution
# ----------------------------------------------------------------------


def substitute(e: Expr, mapping: Mapping[str, Expr | float]) -> Expr:
    """Replace variables by expressions (constant folding reapplied)."""
    repl = {k: _coerce(v) for k, v in mapping.items()}
    memo: dict[int, Expr] = {}

    def go(n: Expr) -> Expr:
        r = memo.get(id(n))
        if r is not None:
            return r
        op = n.op
        if op == "const":
            r = n
        elif op == "var":
            r = repl.get(n.value, n)
        elif op in _BINARY:
            a, b = go(n.args[0]), go(n.args[1])
            r = {"add": add, "sub": sub, "mul": mul, "div": div}[op](a, b)
        elif op == "neg":
            r = neg(go(n.args[0]))
        elif op == "pow":
            r = power(go(n.args[0]), n.value)
        else:
            r = call(op, go(n.args[0]))
        memo[id(n)] = r
        return r

    return go(e)


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------


def _topological(roots: Iterable[Expr]) -> list[Expr]:
    order: list[Expr] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in node.args:
                if id(child) not in seen:
                    stack.append((child, False))
    return order


def evaluate_many(exprs: Iterable[Expr], point: Mapping[str, object]) -> list:
    """Evaluate several expressions at once, sharing common subtrees.

    ``point`` maps coordinate names to floats or equal-length numpy arrays.
    Raises DomainError naming the offending subexpression.
    """
    exprs = list(exprs)
    env = {k: np.asarray(v, dtype=float) for k, v in point.items()}
    values: dict[int, np.ndarray] = {}
    with np.errstate(all="ignore"):
        for n in _topological(exprs):
            values[id(n)] = _eval_node(n, values, env)
    return [values[id(e)] for e in exprs]


def evaluate(e: Expr, point: Mapping[str, object]):
    """Evaluate one expression; returns a float for scalar points."""
    v = evaluate_many([e], point)[0]
    return float(v) if np.ndim(v) == 0 else v


def _eval_node(n: Expr, values, env):
    op = n.op
    if op == "const":
        return np.float64(n.value)
    if op == "var":
        try:
            return env[n.value]
        except KeyError:
            raise ExprError(f"no value bound for coordinate {n.value!r}") from None
    args = [values[id(a)] for a in n.args]
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "neg":
        return -args[0]
    if op == "div":
        if np.any(args[1] == 0):
            raise DomainError("division by zero", n)
        return args[0] / args[1]
    a = args[0]
    if op == "pow":
        p = n.value
        if p.is_integer():
            if p < 0 and np.any(a == 0):
                raise DomainError("division by zero", n)
            return np.power(a, int(p)) if p >= 0 else 1.0 / np.power(a, -int(p))
        if np.any(a < 0) or (p < 0 and np.any(a == 0)):
            raise DomainError("non-integer power of a negative value", n)
        return np.power(a, p)
    if op == "log":
        if np.any(a <= 0):
            raise DomainError("log of a nonpositive value", n)
        return np.log(a)
    if op == "sqrt":
        if np.any(a < 0):
            raise DomainError("sqrt of a negative value", n)
        return np.sqrt(a)
    return getattr(np, op)(a)


# ----------------------------------------------------------------------
# Printing
# ----------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e: Expr) -> str:
    """Render ``e`` in the input grammar; ``parse`` reads it back."""
    memo: dict[int, tuple[str, int]] = {}
    for n in _topological([e]):
        memo[id(n)] = _render(n, memo)
    return memo[id(e)][0]


def _wrap(item: tuple[str, int], need: int) -> str:
    s, p = item
    return s if p >= need else f"({s})"


def _render(n: Expr, memo) -> tuple[str, int]:
    op = n.op
    if op == "const":
        v = n.value
        if not math.isfinite(v):
            raise ExprError("cannot print a non-finite constant")
        if v < 0:
            return "-" + _fmt_number(-v), 3
        return _fmt_number(v), 5
    if op == "var":
        return n.value, 5
    if op in _BINARY:
        p = _PREC[op]
        left = _wrap(memo[id(n.args[0])], p)
        right = _wrap(memo[id(n.args[1])], p + 1)
        return f"{left} {_SYM[op]} {right}", p
    if op == "neg":
        return "-" + _wrap(memo[id(n.args[0])], 4), 3
    if op == "pow":
        base = _wrap(memo[id(n.args[0])], 5)
        exponent = _fmt_number(n.value)
        if n.value < 0:
            exponent = f"({exponent})"
        return f"{base}^{exponent}", 4
    return f"{op}({memo[id(n.args[0])][0]})", 5
