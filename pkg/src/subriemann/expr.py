"""Scalar expressions over coordinates, with exact symbolic differentiation.

Nodes are hash-consed: building the same tree twice returns the same object,
so identity doubles as structural equality and memo tables can key on nodes
directly.  All construction goes through the folding constructors below
(``add``, ``mul``, ``power``, ...), which apply constant folding and the usual
0/1 identities and nothing more.

Grammar accepted by :func:`parse_expr`::

    expr  := term (('+'|'-') term)*
    term  := factor (('*'|'/') factor)*
    factor:= unary ('^' factor)?          # exponent must fold to a constant
    unary := '-' unary | atom
    atom  := number | ident | ident '(' expr ')' | '(' expr ')'

Unary minus binds tighter than ``^``, so ``-x^2`` is ``(-x)^2``.
"""

from __future__ import annotations

import math
import re
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, InputError, ParseError

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sgn")
_BINARY = ("+", "-", "*", "/")


class Expr:
    """Immutable expression node.

    ``kind`` is one of ``const``, ``coord``, ``neg``, ``+``, ``-``, ``*``,
    ``/``, ``pow`` or a function name.  ``value`` holds the constant, the
    coordinate index or the (constant) exponent.
    """

    __slots__ = ("kind", "value", "args", "__weakref__")

    def __init__(self, kind, value, args):
        self.kind = kind
        self.value = value
        self.args = args

    def __setattr__(self, name, value):
        if hasattr(self, "args"):
            raise AttributeError("Expr is immutable")
        object.__setattr__(self, name, value)

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    @property
    def is_const(self):
        return self.kind == "const"

    # Operator sugar; numbers are promoted to constants.
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)


_TABLE: dict = {}


def _make(kind, value, args):
    key = (kind, value, tuple(id(a) for a in args))
    node = _TABLE.get(key)
    if node is None:
        node = Expr(kind, value, tuple(args))
        _TABLE[key] = node
    return node


def const(value) -> Expr:
    v = float(value)
    if not math.isfinite(v):
        raise InputError(f"non-finite constant {value!r}")
    if v == 0.0:
        v = 0.0  # collapse -0.0
    return _make("const", v, ())


def coord(index: int) -> Expr:
    if index < 0:
        raise InputError(f"negative coordinate index {index}")
    return _make("coord", int(index), ())


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


ZERO = const(0.0)
ONE = const(1.0)


def _is(e, v):
    return e.kind == "const" and e.value == v


def _folded(fn, *vals):
    try:
        out = fn(*vals)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    if isinstance(out, complex) or not math.isfinite(out):
        return None
    return const(out)


def neg(a: Expr) -> Expr:
    if a.kind == "const":
        return const(-a.value)
    if a.kind == "neg":
        return a.args[0]
    return _make("neg", None, (a,))


def add(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        r = _folded(lambda x, y: x + y, a.value, b.value)
        if r is not None:
            return r
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return _make("+", None, (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        r = _folded(lambda x, y: x - y, a.value, b.value)
        if r is not None:
            return r
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return _make("-", None, (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        r = _folded(lambda x, y: x * y, a.value, b.value)
        if r is not None:
            return r
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
    # hoist signs so that "-y/2" and "-(y/2)" build the same node
    if a.kind == "neg":
        return neg(mul(a.args[0], b))
    if b.kind == "neg":
        return neg(mul(a, b.args[0]))
    return _make("*", None, (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        raise InputError("division by constant zero")
    if a.kind == "const" and b.kind == "const":
        r = _folded(lambda x, y: x / y, a.value, b.value)
        if r is not None:
            return r
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    if _is(b, -1.0):
        return neg(a)
    if a.kind == "neg":
        return neg(div(a.args[0], b))
    if b.kind == "neg":
        return neg(div(a, b.args[0]))
    return _make("/", None, (a, b))


def power(base: Expr, exponent) -> Expr:
    if isinstance(exponent, Expr):
        if exponent.kind != "const":
            raise InputError("pow exponent must be a constant")
        exponent = exponent.value
    c = float(exponent)
    if not math.isfinite(c):
        raise InputError("non-finite exponent")
    if c == 0.0:
        return ONE
    if c == 1.0:
        return base
    if base.kind == "const":
        r = _folded(math.pow, base.value, c)
        if r is not None:
            return r
    return _make("pow", c, (base,))


def _sgn(v):
    return 1.0 if v > 0 else (-1.0 if v < 0 else 0.0)


_SCALAR_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
    "sgn": _sgn,
}


def func(name: str, a: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise InputError(f"unknown function {name!r}")
    if a.kind == "const":
        r = _folded(_SCALAR_FUNCS[name], a.value)
        if r is not None:
            return r
    return _make(name, None, (a,))


def sin(a):
    return func("sin", as_expr(a))


def cos(a):
    return func("cos", as_expr(a))


def exp(a):
    return func("exp", as_expr(a))


def sqrt(a):
    return func("sqrt", as_expr(a))


def absolute(a):
    return func("abs", as_expr(a))


def sgn(a):
    return func("sgn", as_expr(a))


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, coords):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.names = {name: k for k, name in enumerate(coords)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            shown = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {shown}", pos, self.text)

    def fail(self, message, pos):
        raise ParseError(message, pos, self.text)

    def parse(self):
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            self.fail(f"unexpected token {val!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            rhs = self.factor()
            if op == "*":
                e = mul(e, rhs)
            else:
                try:
                    e = div(e, rhs)
                except InputError as exc:
                    self.fail(str(exc), pos)
        return e

    def factor(self):
        base = self.unary()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            pos = self.take()[2]
            exponent = self.factor()
            if exponent.kind != "const":
                self.fail("pow exponent must be a constant", pos)
            return power(base, exponent.value)
        return base

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return neg(self.unary())
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            try:
                return const(val)
            except InputError as exc:
                self.fail(str(exc), pos)
        if kind == "id":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in FUNCTIONS:
                    self.fail(f"unknown function {val!r}", pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return func(val, arg)
            if val not in self.names:
                if val in FUNCTIONS:
                    self.fail(f"function {val!r} needs a parenthesised argument", self.peek()[2])
                self.fail(f"unknown identifier {val!r}", pos)
            return coord(self.names[val])
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        shown = "end of input" if kind == "end" else repr(val)
        self.fail(f"unexpected {shown}", pos)


def parse_expr(text: str, coords: Sequence[str]) -> Expr:
    """Parse ``text`` into an expression over the named coordinates."""
    if len(set(coords)) != len(coords):
        raise InputError(f"coordinate names are not distinct: {list(coords)}")
    return _Parser(text, list(coords)).parse()


# --------------------------------------------------------------- printing


def _fmt_number(v):
    if v.is_integer() and abs(v) < 1e16:
        s = str(int(v))
    else:
        s = repr(v)
    return f"({s})" if v < 0 else s


def _default_names(n):
    return [f"x{i + 1}" for i in range(n)]


def to_text(e: Expr, coords: Sequence[str] | None = None) -> str:
    """Canonical, fully parenthesised text; re-parses to the same node."""
    if coords is None:
        coords = _default_names(max_coord(e) + 1)
    memo = {}
    for node in _postorder([e]):
        k = node.kind
        if k == "const":
            s = _fmt_number(node.value)
        elif k == "coord":
            s = coords[node.value]
        elif k == "neg":
            s = f"(-{memo[node.args[0]]})"
        elif k in _BINARY:
            s = f"({memo[node.args[0]]} {k} {memo[node.args[1]]})"
        elif k == "pow":
            s = f"({memo[node.args[0]]} ^ {_fmt_number(node.value)})"
        else:
            s = f"{k}({memo[node.args[0]]})"
        memo[node] = s
    return memo[e]


def _postorder(roots):
    """Unique nodes reachable from ``roots``, children before parents."""
    seen = set()
    order = []
    for root in roots:
        if root in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                if node not in seen:
                    seen.add(node)
                    order.append(node)
                continue
            if node in seen:
                continue
            stack.append((node, True))
            for child in reversed(node.args):
                if child not in seen:
                    stack.append((child, False))
    return order


def max_coord(e: Expr) -> int:
    """Largest coordinate index used in ``e`` (-1 for constants)."""
    return max((n.value for n in _postorder([e]) if n.kind == "coord"), default=-1)


# ---------------------------------------------------------- differentiation

_DIFF_MEMO: dict = {}


def diff_expr(e: Expr, i: int) -> Expr:
    """Exact partial derivative with respect to coordinate ``i``.

    ``abs`` differentiates to ``sgn`` and ``sgn`` to zero; both are only valid
    away from the kink.
    """
    key = (e, i)
    hit = _DIFF_MEMO.get(key)
    if hit is not None:
        return hit
    for node in _postorder([e]):
        if (node, i) not in _DIFF_MEMO:
            _DIFF_MEMO[(node, i)] = _diff_node(node, i)
    return _DIFF_MEMO[key]


def _diff_node(e, i):
    k = e.kind
    if k == "const":
        return ZERO
    if k == "coord":
        return ONE if e.value == i else ZERO
    a = e.args[0]
    da = _DIFF_MEMO[(a, i)]
    if k == "neg":
        return neg(da)
    if k in _BINARY:
        b = e.args[1]
        db = _DIFF_MEMO[(b, i)]
        if k == "+":
            return add(da, db)
        if k == "-":
            return sub(da, db)
        if k == "*":
            return add(mul(da, b), mul(a, db))
        if b.kind == "const":
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), mul(b, b))
    if _is(da, 0.0):
        return ZERO
    if k == "pow":
        c = e.value
        return mul(mul(const(c), power(a, c - 1.0)), da)
    if k == "sin":
        return mul(func("cos", a), da)
    if k == "cos":
        return neg(mul(func("sin", a), da))
    if k == "tan":
        return mul(add(ONE, power(func("tan", a), 2.0)), da)
    if k == "exp":
        return mul(e, da)
    if k == "log":
        return div(da, a)
    if k == "sqrt":
        return div(da, mul(const(2.0), e))
    if k == "abs":
        return mul(func("sgn", a), da)
    if k == "sgn":
        return ZERO
    raise AssertionError(k)


# -------------------------------------------------------------- evaluation

_NUMPY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sgn": np.sign,
}

_COMPILED: dict = {}


def compile_exprs(exprs: Sequence[Expr], n: int, mode: str = "scalar") -> Callable:
    """Compile expressions into ``f(x) -> tuple`` with shared subexpressions.

    ``x`` is a length-``n`` sequence.  In ``scalar`` mode its entries must be
    Python floats and math errors raise; in ``numpy`` mode they may be arrays
    and invalid operations yield nan/inf (callers check finiteness).
    """
    exprs = tuple(exprs)
    key = (mode, n, tuple(id(e) for e in exprs))
    hit = _COMPILED.get(key)
    if hit is not None:
        return hit[1]
    if mode == "scalar":
        ns = {f"_{k}": f for k, f in _SCALAR_FUNCS.items()}
        ns["_pow"] = math.pow
    elif mode == "numpy":
        ns = {f"_{k}": f for k, f in _NUMPY_FUNCS.items()}
        ns["_pow"] = np.power
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for e in exprs:
        if max_coord(e) >= n:
            raise InputError(f"expression uses coordinate {max_coord(e)} but dimension is {n}")

    names = {}
    lines = [f"def _f(x):"]
    if n:
        lines.append("    " + ", ".join(f"x{j}" for j in range(n)) + ", = x")
    counter = 0
    for node in _postorder(exprs):
        k = node.kind
        if k == "const":
            names[node] = repr(node.value)
            continue
        if k == "coord":
            names[node] = f"x{node.value}"
            continue
        args = [names[a] for a in node.args]
        if k == "neg":
            rhs = f"-{args[0]}"
        elif k in _BINARY:
            rhs = f"{args[0]} {k} {args[1]}"
        elif k == "pow":
            rhs = f"_pow({args[0]}, {node.value!r})"
        else:
            rhs = f"_{k}({args[0]})"
        name = f"t{counter}"
        counter += 1
        lines.append(f"    {name} = {rhs}")
        names[node] = name
    lines.append("    return (" + "".join(names[e] + ", " for e in exprs) + ")")
    exec("\n".join(lines), ns)  # noqa: S102 - generated from validated trees
    fn = ns["_f"]
    _COMPILED[key] = (exprs, fn)
    return fn


def eval_expr(e: Expr, p: Sequence[float]) -> float:
    """Evaluate ``e`` at point ``p`` in IEEE double precision."""
    pt = [float(v) for v in p]
    fn = compile_exprs((e,), len(pt), "scalar")
    try:
        (out,) = fn(pt)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"{to_text(e)} undefined at {pt}: {exc}") from None
    out = float(out)
    if not math.isfinite(out):
        raise DomainError(f"{to_text(e)} is not finite at {pt}")
    return out
