"""Scalar expressions over named coordinates, evaluated as second-order jets.

Grammar (lowest to highest precedence)::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := atom ('^' unary)?          # right-associative, constant exponent
    atom     := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Derivatives are propagated forward through the tree, so the gradient and
Hessian are exact up to floating point rounding.
"""
from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "JetDomainError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Expression",
    "Jet2",
    "parse",
    "eval_jet2",
    "evaluate",
    "compose",
    "FUNCTIONS",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r} at offset {offset}")


class JetDomainError(ArithmeticError):
    """Raised when a subexpression leaves the domain of its operation."""

    def __init__(self, message: str, subexpression: str):
        self.subexpression = subexpression
        super().__init__(f"{message}: {subexpression}")


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self) -> str:
        text = repr(float(self.value))
        return f"({text})" if self.value < 0 else text


@dataclass(frozen=True)
class Var:
    name: str
    index: int

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Neg:
    operand: "Node"

    def __str__(self) -> str:
        return f"(-{self.operand})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def __str__(self) -> str:
        return f"{self.func}({', '.join(str(a) for a in self.args)})"


Node = Union[Num, Var, Neg, BinOp, Call]

# name -> arity
FUNCTIONS = {"sin": 1, "cos": 1, "tan": 1, "exp": 1, "log": 1, "sqrt": 1, "atan2": 2}


def _depth(node: Node) -> int:
    if isinstance(node, (Num, Var)):
        return 1
    if isinstance(node, Neg):
        return 1 + _depth(node.operand)
    if isinstance(node, BinOp):
        return 1 + max(_depth(node.left), _depth(node.right))
    return 1 + max(_depth(a) for a in node.args)


def _walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.operand)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _walk(a)


@dataclass(frozen=True)
class Expression:
    """A parsed expression bound to an ordered coordinate list."""

    root: Node
    coords: tuple
    source: str = field(default="", compare=False)
    _compiled: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def depth(self) -> int:
        return _depth(self.root)

    def nodes(self):
        return _walk(self.root)

    def count(self, kind: type) -> int:
        return sum(isinstance(n, kind) for n in self.nodes())

    def __str__(self) -> str:
        return str(self.root)

    def jet(self, point) -> "Jet2":
        return eval_jet2(self, point)

    def __call__(self, point) -> float:
        return float(evaluate(self, point, order=0)[0])


@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian of a scalar function at one point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int  # byte offset


def _tokenize(source: str) -> list[_Tok]:
    tokens = []
    pos = 0
    # char offset -> byte offset
    def boff(i: int) -> int:
        return len(source[:i].encode("utf-8"))

    while pos < len(source):
        if source[pos:].strip() == "":
            pos = len(source)
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.lastgroup is None:
            start = pos
            while start < len(source) and source[start].isspace():
                start += 1
            raise ExprSyntaxError(f"unexpected character {source[start]!r}", boff(start), source)
        kind = m.lastgroup
        tokens.append(_Tok(kind, m.group(kind), boff(m.start(kind))))
        pos = m.end()
    tokens.append(_Tok("end", "", len(source.encode("utf-8"))))
    return tokens


class _Parser:
    def __init__(self, source: str, coords: Sequence[str]):
        self.source = source
        self.coords = {name: i for i, name in enumerate(coords)}
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.tokens[self.i]

    def advance(self) -> _Tok:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise ExprSyntaxError(message, tok.offset, self.source)

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind != "op":
            what = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            self.error(f"expected {text!r}, found {what}")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected token {self.tok.text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            caret = self.advance()
            exponent = self.unary()
            for n in _walk(exponent):
                if isinstance(n, Var):
                    raise ExprSyntaxError("exponent must be constant", caret.offset, self.source)
            return BinOp("^", base, exponent)
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                self.error("numeric literal out of range", tok)
            return Num(value)
        if tok.kind == "ident":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownIdentifierError(tok.text, tok.offset)
                self.advance()
                args = [self.expr()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[tok.text]:
                    raise ExprSyntaxError(
                        f"{tok.text} takes {FUNCTIONS[tok.text]} argument(s), got {len(args)}",
                        tok.offset,
                        self.source,
                    )
                return Call(tok.text, tuple(args))
            if tok.text not in self.coords:
                raise UnknownIdentifierError(tok.text, tok.offset)
            return Var(tok.text, self.coords[tok.text])
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if tok.kind == "end" else f"token {tok.text!r}"
        self.error(f"unexpected {what}")


def parse(source: str, coords: Sequence[str]) -> Expression:
    """Parse ``source`` into an :class:`Expression` over ``coords``."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    coords = tuple(coords)
    if len(set(coords)) != len(coords):
        raise ExprError(f"duplicate coordinate names in {coords}")
    for name in coords:
        if name in FUNCTIONS:
            raise ExprError(f"coordinate name {name!r} shadows a function")
    return Expression(_Parser(source, coords).parse(), coords, source)


def compose(outer: Expression, inner: Mapping[str, Expression] | Sequence[Expression]) -> Expression:
    """Substitute expressions for the coordinates of ``outer``.

    ``inner`` maps each coordinate of ``outer`` (or lists them in order) to an
    expression; all inner expressions must share one coordinate list.
    """
    if not isinstance(inner, Mapping):
        inner = dict(zip(outer.coords, inner))
    missing = [c for c in outer.coords if c not in inner]
    if missing:
        raise ExprError(f"no substitution for {missing}")
    coord_sets = {e.coords for e in inner.values()}
    if len(coord_sets) != 1:
        raise ExprError("substituted expressions use different coordinate lists")
    (coords,) = coord_sets

    def sub(node: Node) -> Node:
        if isinstance(node, Var):
            return inner[node.name].root
        if isinstance(node, Num):
            return node
        if isinstance(node, Neg):
            return Neg(sub(node.operand))
        if isinstance(node, BinOp):
            # constant exponents contain no variables
            return BinOp(node.op, sub(node.left), sub(node.right))
        return Call(node.func, tuple(sub(a) for a in node.args))

    return Expression(sub(outer.root), coords)


# ---------------------------------------------------------------------------
# Jet propagation
#
# A jet is a tuple (v, g, H) with v of batch shape S, g of shape (d,)+S and
# H of shape (d, d)+S.  g / H are None when not requested.

_Jet = tuple


def _outer(a, b):
    return a[:, None] * b[None, :]


def _unary(u: _Jet, f, df, d2f) -> _Jet:
    v, g, H = u
    fv = f(v)
    if g is None:
        return fv, None, None
    d1 = df(v)
    G = d1 * g
    if H is None:
        return fv, G, None
    return fv, G, d1 * H + d2f(v) * _outer(g, g)


def _binary(a: _Jet, b: _Jet, v, fa, fb, faa, fab, fbb) -> _Jet:
    va, ga, Ha = a
    vb, gb, Hb = b
    if ga is None:
        return v, None, None
    G = fa * ga + fb * gb
    if Ha is None:
        return v, G, None
    ab = _outer(ga, gb)
    H = fa * Ha + fb * Hb + faa * _outer(ga, ga) + fab * (ab + np.swapaxes(ab, 0, 1)) + fbb * _outer(gb, gb)
    return v, G, H


def _add(a, b, sign=1.0):
    va, ga, Ha = a
    vb, gb, Hb = b
    g = None if ga is None else ga + sign * gb
    H = None if Ha is None else Ha + sign * Hb
    return va + sign * vb, g, H


def _mul(a, b):
    va, ga, Ha = a
    vb, gb, Hb = b
    if ga is None:
        return va * vb, None, None
    G = va * gb + vb * ga
    if Ha is None:
        return va * vb, G, None
    ab = _outer(ga, gb)
    return va * vb, G, va * Hb + vb * Ha + ab + np.swapaxes(ab, 0, 1)


def _scale(a, c):
    v, g, H = a
    return c * v, None if g is None else c * g, None if H is None else c * H


def _check(bad, message, node):
    if np.any(bad):
        raise JetDomainError(message, str(node))


def _compile(node: Node, order: int) -> Callable:
    """Turn ``node`` into a closure mapping coordinate jets to a jet."""
    if isinstance(node, Num):
        c = float(node.value)

        def const(xs, zero):
            v0, g0, H0 = zero
            return v0 + c, g0, H0

        return const
    if isinstance(node, Var):
        i = node.index
        return lambda xs, zero: xs[i]
    if isinstance(node, Neg):
        f = _compile(node.operand, order)
        return lambda xs, zero: _scale(f(xs, zero), -1.0)
    if isinstance(node, BinOp):
        fl = _compile(node.left, order)
        op = node.op
        if op == "^":
            return _compile_pow(node, fl, order)
        fr = _compile(node.right, order)
        if op in "*/" and _is_constant(node.right):
            c = _const_value(node.right)
            if op == "/":
                if c == 0:
                    def zero_div(xs, zero):
                        raise JetDomainError("division by zero", str(node))

                    return zero_div
                c = 1.0 / c
            return lambda xs, zero: _scale(fl(xs, zero), c)
        if op == "*" and _is_constant(node.left):
            c = _const_value(node.left)
            return lambda xs, zero: _scale(fr(xs, zero), c)
        if op == "+":
            return lambda xs, zero: _add(fl(xs, zero), fr(xs, zero))
        if op == "-":
            return lambda xs, zero: _add(fl(xs, zero), fr(xs, zero), -1.0)
        if op == "*":
            return lambda xs, zero: _mul(fl(xs, zero), fr(xs, zero))

        def div(xs, zero):
            a = fl(xs, zero)
            b = fr(xs, zero)
            _check(b[0] == 0, "division by zero", node)
            inv = _unary(b, lambda v: 1.0 / v, lambda v: -1.0 / v**2, lambda v: 2.0 / v**3)
            return _mul(a, inv)

        return div
    return _compile_call(node, order)


def _is_constant(node: Node) -> bool:
    return not any(isinstance(n, Var) for n in _walk(node))


def _const_value(node: Node) -> float:
    jet = _compile(node, 0)(None, (np.zeros(()), None, None))
    return float(jet[0])


def _compile_pow(node: BinOp, fbase: Callable, order: int) -> Callable:
    c = _const_value(node.right)
    if c == int(c) and abs(c) < 2**31:
        k = int(c)
        if k == 0:
            return lambda xs, zero: (zero[0] + 1.0, zero[1], zero[2])
        if k == 1:
            return fbase

        def ipow(xs, zero):
            u = fbase(xs, zero)
            if k < 0:
                _check(u[0] == 0, "zero raised to a negative power", node)
            return _unary(
                u,
                lambda v: v**k,
                lambda v: k * v ** (k - 1),
                lambda v: k * (k - 1) * v ** (k - 2) if k != 2 else 2.0 + 0.0 * v,
            )

        return ipow

    def rpow(xs, zero):
        u = fbase(xs, zero)
        _check(u[0] <= 0, "non-integer power of a non-positive base", node)
        return _unary(u, lambda v: v**c, lambda v: c * v ** (c - 1), lambda v: c * (c - 1) * v ** (c - 2))

    return rpow


def _compile_call(node: Call, order: int) -> Callable:
    args = [_compile(a, order) for a in node.args]
    name = node.func
    if name == "atan2":
        fy, fx = args

        def atan2(xs, zero):
            y = fy(xs, zero)
            x = fx(xs, zero)
            r2 = y[0] ** 2 + x[0] ** 2
            _check(r2 == 0, "atan2 undefined at the origin", node)
            r4 = r2 * r2
            return _binary(
                y,
                x,
                np.arctan2(y[0], x[0]),
                x[0] / r2,
                -y[0] / r2,
                -2 * x[0] * y[0] / r4,
                (y[0] ** 2 - x[0] ** 2) / r4,
                2 * x[0] * y[0] / r4,
            )

        return atan2

    (fu,) = args
    if name == "sin":
        rules = (np.sin, np.cos, lambda v: -np.sin(v))
    elif name == "cos":
        rules = (np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v))
    elif name == "tan":
        rules = (np.tan, lambda v: 1.0 / np.cos(v) ** 2, lambda v: 2.0 * np.tan(v) / np.cos(v) ** 2)
    elif name == "exp":
        rules = (np.exp, np.exp, np.exp)
    elif name == "log":
        rules = (np.log, lambda v: 1.0 / v, lambda v: -1.0 / v**2)
    else:
        rules = (np.sqrt, lambda v: 0.5 / np.sqrt(v), lambda v: -0.25 / v**1.5)

    def call(xs, zero):
        u = fu(xs, zero)
        if name == "log":
            _check(u[0] <= 0, "log of a non-positive value", node)
        elif name == "sqrt":
            _check(u[0] < 0, "sqrt of a negative value", node)
            if order > 0:
                _check(u[0] == 0, "sqrt is not differentiable at zero", node)
        elif name == "tan":
            _check(np.cos(u[0]) == 0, "tan pole", node)
        return _unary(u, *rules)

    return call


@functools.lru_cache(maxsize=256)
def _seeds(d: int, batch: tuple, order: int):
    """Read-only zero jet and coordinate seed jets for a batch shape."""
    zv = np.zeros(batch)
    zg = np.zeros((d,) + batch) if order >= 1 else None
    zH = np.zeros((d, d) + batch) if order >= 2 else None
    units = [None] * d
    if order >= 1:
        eye = np.eye(d).reshape((d, d) + (1,) * len(batch))
        units = [np.broadcast_to(eye[i], (d,) + batch) for i in range(d)]
    for a in (zv, zg, zH):
        if a is not None:
            a.flags.writeable = False
    return (zv, zg, zH), units, zH


def evaluate(expr: Expression, points, order: int = 2):
    """Evaluate ``expr`` at one point or a batch of points.

    ``points`` has shape ``(d,)`` or ``(d, N)``.  Returns ``(value, gradient,
    hessian)`` arrays with shapes ``S``, ``(d,)+S`` and ``(d, d)+S`` where ``S``
    is ``()`` or ``(N,)``; entries beyond ``order`` are ``None``.
    """
    pts = np.asarray(points, dtype=float)
    d = expr.dim
    if pts.shape[:1] != (d,):
        raise ValueError(f"point has leading dimension {pts.shape[:1]}, expected ({d},)")
    fn = expr._compiled.get(order)
    if fn is None:
        fn = _compile(expr.root, order)
        expr._compiled[order] = fn
    batch = pts.shape[1:]
    seeds = _seeds(d, batch, order)
    xs = [(pts[i], seeds[1][i], seeds[2]) for i in range(d)]
    with np.errstate(all="ignore"):
        v, g, H = fn(xs, seeds[0])
    if np.shape(v) != batch:
        v = np.broadcast_to(v, batch)
    v = np.array(v, dtype=float)
    if g is not None:
        if g.shape != (d,) + batch:
            g = np.broadcast_to(g, (d,) + batch)
        g = np.array(g, dtype=float)
    if H is not None:
        if H.shape != (d, d) + batch:
            H = np.broadcast_to(H, (d, d) + batch)
        H = 0.5 * (H + np.swapaxes(H, 0, 1))
    return v, g, H


def eval_jet2(expr: Expression, point) -> Jet2:
    """Value, gradient and Hessian of ``expr`` at a single point."""
    point = np.asarray(point, dtype=float)
    if point.shape != (expr.dim,):
        raise ValueError(f"point has shape {point.shape}, expected ({expr.dim},)")
    v, g, H = evaluate(expr, point, order=2)
    return Jet2(float(v), g, H)
