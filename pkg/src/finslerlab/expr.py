"""Scalar fields of ``(q, u)`` written as infix expressions.

Grammar (whitespace insensitive)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | q<k> | u<k> | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | log | sqrt

``^`` is right-associative and binds tighter than unary minus, so
``-u1^2`` is ``-(u1^2)`` and ``2^-1`` is ``2^(-1)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import mpmath
import numpy as np

from . import _kernels
from ._kernels import _ops
from .autodiff import MAX_ORDER, JetValue, _as_coords

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")
POWI_MAX = 64


class ExpressionError(ValueError):
    """Base class for parse-time errors; ``position`` is a 0-based offset into the source."""

    def __init__(self, message: str, source: str = "", position: int | None = None):
        self.message = message
        self.source = source
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}")


class ParseError(ExpressionError):
    pass


class UnknownIdentifierError(ExpressionError):
    pass


class IndexOutOfRangeError(ExpressionError):
    pass


class DomainError(ArithmeticError):
    """Evaluation left the domain of sqrt/log/pow or divided by zero."""

    def __init__(self, reason: str, subexpression: str):
        self.reason = reason
        self.subexpression = subexpression
        super().__init__(f"{reason} in '{subexpression}'")


# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # 'q' or 'u'
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def to_source(node: Node) -> str:
    """Print with the minimal parentheses that re-parse to the same tree."""
    if isinstance(node, Num):
        v = float(node.value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Neg):
        inner = to_source(node.arg)
        return f"-({inner})" if _prec(node.arg) < _PREC["neg"] else f"-{inner}"
    p = _PREC[node.op]
    left, right = to_source(node.left), to_source(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}" if p == 1 else f"{left}{node.op}{right}"


# Parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_VARNAME = re.compile(r"([qu])(\d+)$")


def _tokenize(source: str):
    tokens = []
    pos = 0
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos >= len(source):
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {source[pos]!r}", source, pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, dim: int):
        self.source = source
        self.dim = dim
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, val, pos = self.take()
        if val != text or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {text!r}, found {found}", self.source, pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", self.source, pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            value = float(val)
            if not math.isfinite(value):
                raise ParseError(f"literal {val} is not a finite double", self.source, pos)
            return Num(value)
        if kind == "ident":
            m = _VARNAME.match(val)
            if m:
                k = int(m.group(2))
                if not 1 <= k <= self.dim:
                    raise IndexOutOfRangeError(
                        f"variable {val} out of range for dimension {self.dim}", self.source, pos
                    )
                return Var(m.group(1), k)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", self.source, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", self.source, pos)


def _variable_free(node: Node) -> bool:
    if isinstance(node, Num):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, (Neg, Call)):
        return _variable_free(node.arg)
    return _variable_free(node.left) and _variable_free(node.right)


def _constant_exponent(node: Node):
    """Classify the exponent of ``a^b``: ``('int', k)``, ``('real', c)`` or ``None``."""
    if not _variable_free(node):
        return None
    c = float(eval_node(node, [], FLOAT_LIB, dim=0))
    if c == math.floor(c) and 0 <= c <= POWI_MAX:
        return ("int", int(c))
    return ("real", c)


# Generic tree evaluation over float or mpmath scalars


class _Lib:
    def __init__(self, sin, cos, exp, log, sqrt, one):
        self.sin, self.cos, self.exp, self.log, self.sqrt, self.one = sin, cos, exp, log, sqrt, one


FLOAT_LIB = _Lib(math.sin, math.cos, math.exp, math.log, math.sqrt, 1.0)
MP_LIB = _Lib(mpmath.sin, mpmath.cos, mpmath.exp, mpmath.log, mpmath.sqrt, mpmath.mpf(1))


def eval_node(node: Node, x, lib: _Lib, dim: int):
    """Plain evaluation; ``x`` holds ``(q1..qn, u1..un)``.  Mirrors the kernels' value path."""
    if isinstance(node, Num):
        return node.value if lib is FLOAT_LIB else mpmath.mpf(node.value)
    if isinstance(node, Var):
        return x[node.index - 1 + (dim if node.kind == "u" else 0)]
    if isinstance(node, Neg):
        return -eval_node(node.arg, x, lib, dim)
    if isinstance(node, Call):
        a = eval_node(node.arg, x, lib, dim)
        if node.func == "log" and a <= 0:
            raise DomainError(_ops.STATUS_TEXT[_ops.ERR_LOG], to_source(node))
        if node.func == "sqrt" and a < 0:
            raise DomainError(_ops.STATUS_TEXT[_ops.ERR_SQRT], to_source(node))
        return getattr(lib, node.func)(a)
    a = eval_node(node.left, x, lib, dim)
    if node.op == "^":
        kind = _constant_exponent(node.right)
        if kind is not None and kind[0] == "int":
            k, result, base = kind[1], lib.one, a
            while k > 0:
                if k & 1:
                    result = result * base
                k >>= 1
                if k > 0:
                    base = base * base
            return result
        b = eval_node(node.right, x, lib, dim)
        if kind is not None:
            c = kind[1]
            if (a < 0 and c != math.floor(c)) or (a == 0 and c < 0):
                raise DomainError(_ops.STATUS_TEXT[_ops.ERR_POW], to_source(node))
            return a ** (c if lib is FLOAT_LIB else mpmath.mpf(c))
        if a <= 0:
            raise DomainError(_ops.STATUS_TEXT[_ops.ERR_POW], to_source(node))
        return lib.exp(b * lib.log(a))
    b = eval_node(node.right, x, lib, dim)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if b == 0:
        raise DomainError(_ops.STATUS_TEXT[_ops.ERR_DIV], to_source(node))
    return a / b


# Tape compilation

_FUNC_OPS = {"sin": _ops.SIN, "cos": _ops.COS, "exp": _ops.EXP, "log": _ops.LOG, "sqrt": _ops.SQRT}
_BIN_OPS = {"+": _ops.ADD, "-": _ops.SUB, "*": _ops.MUL, "/": _ops.DIV}


@dataclass(frozen=True)
class Program:
    """Straight-line tape: instruction ``s`` writes slot ``s``; ``outputs`` name result slots."""

    ops: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    cst: np.ndarray
    outputs: np.ndarray
    nvars: int
    labels: tuple[str, ...]

    def run(self, X: np.ndarray, order: int, backend=None) -> np.ndarray:
        """Jets of all outputs at the rows of ``X``; raises :class:`DomainError` on the first bad point."""
        if not 0 <= order <= MAX_ORDER:
            raise ValueError(f"order must be in 0..{MAX_ORDER}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        be = backend or _kernels.get_backend()
        res, status, fail = be.eval_tape(self, X, order)
        bad = np.flatnonzero(status)
        if bad.size:
            p = bad[0]
            raise DomainError(_ops.STATUS_TEXT[int(status[p])], self.labels[int(fail[p])])
        return res


def compile_nodes(roots: list[Node], dim: int) -> Program:
    ops, a0, a1, cst, labels = [], [], [], [], []
    memo: dict[tuple, int] = {}

    def emit(key, op, x=0, y=0, c=0.0, label=""):
        if key in memo:
            return memo[key]
        ops.append(op)
        a0.append(x)
        a1.append(y)
        cst.append(c)
        labels.append(label)
        memo[key] = len(ops) - 1
        return memo[key]

    def walk(node: Node) -> int:
        label = to_source(node)
        if isinstance(node, Num):
            return emit(("num", node.value), _ops.CONST, c=node.value, label=label)
        if isinstance(node, Var):
            k = node.index - 1 + (dim if node.kind == "u" else 0)
            return emit(("var", k), _ops.VAR, x=k, label=label)
        if isinstance(node, Neg):
            s = walk(node.arg)
            return emit(("neg", s), _ops.NEG, x=s, label=label)
        if isinstance(node, Call):
            s = walk(node.arg)
            return emit((node.func, s), _FUNC_OPS[node.func], x=s, label=label)
        left = walk(node.left)
        if node.op == "^":
            kind = _constant_exponent(node.right)
            if kind is not None and kind[0] == "int":
                return emit(("powi", left, kind[1]), _ops.POWI, x=left, c=float(kind[1]), label=label)
            if kind is not None:
                return emit(("powc", left, kind[1]), _ops.POWC, x=left, c=kind[1], label=label)
            right = walk(node.right)
            return emit(("pow", left, right), _ops.POW, x=left, y=right, label=label)
        right = walk(node.right)
        return emit((node.op, left, right), _BIN_OPS[node.op], x=left, y=right, label=label)

    outputs = [walk(r) for r in roots]
    return Program(
        ops=np.array(ops, dtype=np.int64),
        a0=np.array(a0, dtype=np.int64),
        a1=np.array(a1, dtype=np.int64),
        cst=np.array(cst, dtype=float),
        outputs=np.array(outputs, dtype=np.int64),
        nvars=2 * dim,
        labels=tuple(labels),
    )


@dataclass(frozen=True)
class Expression:
    """Immutable parsed scalar field in ``q1..qn, u1..un``."""

    root: Node
    dim: int

    @cached_property
    def program(self) -> Program:
        return compile_nodes([self.root], self.dim)

    @cached_property
    def variables(self) -> frozenset:
        found = set()

        def walk(node):
            if isinstance(node, Var):
                found.add(f"{node.kind}{node.index}")
            elif isinstance(node, (Neg, Call)):
                walk(node.arg)
            elif isinstance(node, BinOp):
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return frozenset(found)

    @property
    def depends_on_u(self) -> bool:
        return any(v.startswith("u") for v in self.variables)

    def jet(self, point, order: int = 0) -> JetValue:
        x = _as_coords(point, 2 * self.dim)
        return JetValue(self.program.run(x[None, :], order)[0, 0], self.dim, order)

    def __call__(self, point) -> float:
        return float(eval_node(self.root, list(_as_coords(point, 2 * self.dim)), FLOAT_LIB, self.dim))

    def eval_mp(self, xs):
        return eval_node(self.root, xs, MP_LIB, self.dim)

    def __str__(self) -> str:
        return to_source(self.root)


def parse(source: str, dim: int) -> Expression:
    if not isinstance(dim, int) or dim < 1:
        raise ValueError("dim must be a positive integer")
    if not source or not source.strip():
        raise ParseError("empty expression", source or "", 0)
    return Expression(_Parser(source, dim).parse(), dim)


def evaluate(e: Expression, point, order: int = 0) -> JetValue:
    """Value and all partials of ``e`` up to ``order`` at ``point``."""
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 0..{MAX_ORDER}")
    return e.jet(point, order)


def compile_many(exprs: list[Expression]) -> Program:
    """One shared tape for several expressions of the same dimension (common subtrees shared)."""
    dims = {e.dim for e in exprs}
    if len(dims) != 1:
        raise ValueError("expressions must share one dimension")
    return compile_nodes([e.root for e in exprs], dims.pop())
