"""Arithmetic expressions over ``t, q1..qn, u1..um``.

Expressions are parsed into a small immutable AST.  Each AST can be

* evaluated at a point (:func:`eval_expr`),
* differentiated in forward mode with dual numbers (:func:`differentiate`),
* compiled to a postfix program that the kernels in :mod:`pmpkit.kernels`
  evaluate in batches.

Grammar, loosest binding first::

    sum     := product (('+' | '-') product)*
    product := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | IDENT | IDENT '(' sum ')' | '(' sum ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import (
    DomainError,
    ExpressionSyntaxError,
    IndexOutOfRange,
    NonFiniteValue,
    UnknownIdentifier,
)

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")
# Accepted by many expression languages but not C^1; refused explicitly.
NONSMOOTH = ("abs", "floor", "ceil", "sign", "min", "max", "round")


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "t", "q" or "u"
    index: int = 0  # 1-based for q/u, 0 for t

    @property
    def name(self):
        return "t" if self.kind == "t" else f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Div:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, Add, Sub, Mul, Div, Pow, Call]
BINARY = (Add, Sub, Mul, Div, Pow)


def variables(e):
    """Set of variable names appearing in ``e``."""
    out = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, (Neg, Call)):
            stack.append(node.arg)
        elif isinstance(node, BINARY):
            stack.extend((node.left, node.right))
    return out


def uses_control(e):
    return any(name.startswith("u") for name in variables(e))


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


class _Parser:
    def __init__(self, text, n, m):
        self.text = text
        self.n = n
        self.m = m
        self.tokens = self._tokenize(text)
        self.pos = 0

    def _byte(self, char_pos):
        return len(self.text[:char_pos].encode("utf-8"))

    def _tokenize(self, text):
        tokens = []
        i = 0
        while i < len(text):
            if text[i].isspace():
                i += 1
                continue
            match = _TOKEN.match(text, i)
            if match is None or match.end() == i:
                raise ExpressionSyntaxError(
                    f"unexpected character {text[i]!r}", self._byte(i), text[i]
                )
            kind = match.lastgroup
            start = match.start(kind)
            tokens.append((kind, match.group(kind), start))
            i = match.end()
        tokens.append(("end", "", len(text)))
        return tokens

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, text, start = self.advance()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ExpressionSyntaxError(
                f"expected {value!r}, found {found}", self._byte(start), text
            )

    def parse(self):
        node = self.sum()
        kind, text, start = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(
                f"unexpected token {text!r}", self._byte(start), text
            )
        return node

    def sum(self):
        node = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            rhs = self.product()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def product(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return Pow(base, self.unary())
        return base

    def atom(self):
        kind, text, start = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            return self.identifier(text, start)
        if kind == "op" and text == "(":
            node = self.sum()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExpressionSyntaxError(f"unexpected {found}", self._byte(start), text)

    def identifier(self, name, start):
        offset = self._byte(start)
        if name in FUNCTIONS:
            self.expect("(")
            arg = self.sum()
            self.expect(")")
            return Call(name, arg)
        if name in NONSMOOTH:
            raise UnknownIdentifier(
                f"function {name!r} is not continuously differentiable", offset, name
            )
        if name == "t":
            return Var("t", 0)
        match = re.fullmatch(r"([qu])([1-9]\d*)", name)
        if match is None:
            raise UnknownIdentifier(f"unknown identifier {name!r}", offset, name)
        kind, index = match.group(1), int(match.group(2))
        limit = self.n if kind == "q" else self.m
        if index > limit:
            raise IndexOutOfRange(
                f"{name} exceeds declared dimension {kind}-dim={limit}", offset, name
            )
        return Var(kind, index)


def parse_expression(text, n, m):
    """Parse ``text`` into an :data:`Expr` over ``t, q1..qn, u1..um``.

    Raises
    ------
    ExpressionSyntaxError, UnknownIdentifier, IndexOutOfRange
        Each carries the byte offset of the offending token in ``offset``.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be at least 1")
    return _Parser(text, n, m).parse()


# --------------------------------------------------------------------------
# Pretty printing
# --------------------------------------------------------------------------

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}
_SYMBOL = {Add: "+", Sub: "-", Mul: "*", Div: "/", Pow: "^"}


def _negative(e):
    return isinstance(e, Num) and math.copysign(1.0, e.value) < 0


def _prec(e):
    # a negative literal prints like the negation it parses back to
    if _negative(e):
        return _PREC[Neg]
    return _PREC.get(type(e), 5)


def pretty_print(e):
    """Render ``e`` with the minimal parentheses that parse back to ``e``."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({pretty_print(e.arg)})"
    if isinstance(e, Neg):
        inner = pretty_print(e.arg)
        if _prec(e.arg) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    prec = _PREC[type(e)]
    left, right = pretty_print(e.left), pretty_print(e.right)
    if isinstance(e, Pow):
        if _prec(e.left) <= prec:
            left = f"({left})"
        if _prec(e.right) < 3:
            right = f"({right})"
    else:
        if _prec(e.left) < prec:
            left = f"({left})"
        if _prec(e.right) <= prec:
            right = f"({right})"
    return f"{left} {_SYMBOL[type(e)]} {right}"


# --------------------------------------------------------------------------
# Point evaluation
# --------------------------------------------------------------------------


def _check_pow(a, b):
    if a < 0 and b != math.floor(b):
        raise DomainError(f"negative base {a!r} with non-integer exponent {b!r}")
    if a == 0 and b < 0:
        raise NonFiniteValue("zero raised to a negative power")


def _apply(fn, x):
    if fn == "log":
        if x <= 0:
            raise DomainError(f"log of nonpositive value {x!r}")
        return math.log(x)
    if fn == "sqrt":
        if x < 0:
            raise DomainError(f"sqrt of negative value {x!r}")
        return math.sqrt(x)
    try:
        return getattr(math, fn)(x)
    except OverflowError:
        raise NonFiniteValue(f"{fn}({x!r}) overflows") from None


def _eval(e, q, u, t):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.kind == "t":
            return t
        return q[e.index - 1] if e.kind == "q" else u[e.index - 1]
    if isinstance(e, Neg):
        return -_eval(e.arg, q, u, t)
    if isinstance(e, Call):
        return _apply(e.fn, _eval(e.arg, q, u, t))
    a = _eval(e.left, q, u, t)
    b = _eval(e.right, q, u, t)
    if isinstance(e, Add):
        return a + b
    if isinstance(e, Sub):
        return a - b
    if isinstance(e, Mul):
        return a * b
    if isinstance(e, Div):
        if b == 0:
            raise NonFiniteValue("division by zero")
        return a / b
    _check_pow(a, b)
    try:
        return a**b
    except OverflowError:
        raise NonFiniteValue(f"{a!r}^{b!r} overflows") from None


def eval_expr(e, q, u, t):
    """Evaluate ``e`` at state ``q``, control ``u`` and time ``t``."""
    value = float(_eval(e, [float(x) for x in q], [float(x) for x in u], float(t)))
    if not math.isfinite(value):
        raise NonFiniteValue(f"expression evaluated to {value}")
    return value


# --------------------------------------------------------------------------
# Forward-mode differentiation with dual numbers
# --------------------------------------------------------------------------


class Dual:
    """Value together with its gradient with respect to ``(t, q, u)``."""

    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = val
        self.grad = grad

    def __add__(self, o):
        return Dual(self.val + o.val, self.grad + o.grad)

    def __sub__(self, o):
        return Dual(self.val - o.val, self.grad - o.grad)

    def __mul__(self, o):
        return Dual(self.val * o.val, self.grad * o.val + o.grad * self.val)

    def __truediv__(self, o):
        if o.val == 0:
            raise NonFiniteValue("division by zero")
        return Dual(self.val / o.val, (self.grad * o.val - o.grad * self.val) / o.val**2)

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __pow__(self, o):
        a, b = self.val, o.val
        _check_pow(a, b)
        try:
            val = a**b
        except OverflowError:
            raise NonFiniteValue(f"{a!r}^{b!r} overflows") from None
        if b == 0:
            grad = np.zeros_like(self.grad)
        else:
            grad = self.grad * (b * a ** (b - 1)) if a != 0 or b >= 1 else self.grad * math.inf
        if np.any(o.grad != 0):
            if a <= 0:
                raise DomainError("variable exponent requires a positive base")
            grad = grad + o.grad * (val * math.log(a))
        return Dual(val, grad)

    def apply(self, fn):
        x = self.val
        val = _apply(fn, x)
        if fn == "sin":
            d = math.cos(x)
        elif fn == "cos":
            d = -math.sin(x)
        elif fn == "exp":
            d = val
        elif fn == "log":
            d = 1.0 / x
        elif fn == "sqrt":
            d = 0.5 / val if val > 0 else math.inf
        else:
            d = 1.0 - val * val
        return Dual(val, self.grad * d)


def _dual(e, env):
    if isinstance(e, Num):
        return Dual(e.value, np.zeros(env["dim"]))
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -_dual(e.arg, env)
    if isinstance(e, Call):
        return _dual(e.arg, env).apply(e.fn)
    a = _dual(e.left, env)
    b = _dual(e.right, env)
    if isinstance(e, Add):
        return a + b
    if isinstance(e, Sub):
        return a - b
    if isinstance(e, Mul):
        return a * b
    if isinstance(e, Div):
        return a / b
    return a**b


def value_and_gradient(e, q, u, t):
    """Value of ``e`` and its gradient ordered as ``(t, q1..qn, u1..um)``."""
    q = [float(x) for x in q]
    u = [float(x) for x in u]
    dim = 1 + len(q) + len(u)
    seeds = np.eye(dim)
    env = {"dim": dim, "t": Dual(float(t), seeds[0])}
    for i, x in enumerate(q):
        env[f"q{i + 1}"] = Dual(x, seeds[1 + i])
    for i, x in enumerate(u):
        env[f"u{i + 1}"] = Dual(x, seeds[1 + len(q) + i])
    with np.errstate(all="ignore"):
        out = _dual(e, env)
    if not (math.isfinite(out.val) and np.all(np.isfinite(out.grad))):
        raise NonFiniteValue("non-finite value or derivative")
    return float(out.val), out.grad


def differentiate(e, wrt, q, u, t):
    """Partial derivatives of ``e`` with respect to the state or the control.

    Parameters
    ----------
    wrt : {"state", "control", "time"}
    """
    _, grad = value_and_gradient(e, q, u, t)
    n = len(q)
    key = wrt.lower()
    if key in ("state", "q"):
        return grad[1 : 1 + n]
    if key in ("control", "u"):
        return grad[1 + n :]
    if key in ("time", "t"):
        return grad[:1]
    raise ValueError(f"cannot differentiate with respect to {wrt!r}")


# --------------------------------------------------------------------------
# Compilation to postfix programs
# --------------------------------------------------------------------------

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_NEG = range(8)
OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT, OP_TANH = range(8, 14)
_FN_OPS = dict(zip(FUNCTIONS, (OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT, OP_TANH)))
_BIN_OPS = {Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV, Pow: OP_POW}


@dataclass(frozen=True)
class Program:
    """Several expressions compiled into one flat postfix instruction stream.

    Expression ``i`` occupies instructions ``offsets[i]:offsets[i+1]``.  The
    variable slot layout is ``(t, q1..qn, u1..um)``.
    """

    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    offsets: np.ndarray
    depth: int
    dim: int

    @property
    def count(self):
        return len(self.offsets) - 1


def _emit(e, n, ops, args, consts):
    """Append postfix code for ``e``; return the stack depth it needs."""
    if isinstance(e, Num):
        ops.append(OP_CONST)
        args.append(len(consts))
        consts.append(float(e.value))
        return 1
    if isinstance(e, Var):
        ops.append(OP_VAR)
        args.append(0 if e.kind == "t" else (e.index if e.kind == "q" else n + e.index))
        return 1
    if isinstance(e, (Neg, Call)):
        depth = _emit(e.arg, n, ops, args, consts)
        ops.append(OP_NEG if isinstance(e, Neg) else _FN_OPS[e.fn])
        args.append(0)
        return depth
    d1 = _emit(e.left, n, ops, args, consts)
    d2 = _emit(e.right, n, ops, args, consts)
    ops.append(_BIN_OPS[type(e)])
    args.append(0)
    return max(d1, d2 + 1)


def compile_program(exprs, n, m):
    ops, args, consts, offsets = [], [], [], [0]
    depth = 1
    for e in exprs:
        depth = max(depth, _emit(e, n, ops, args, consts))
        offsets.append(len(ops))
    return Program(
        ops=np.asarray(ops, dtype=np.intc),
        args=np.asarray(args, dtype=np.intc),
        consts=np.asarray(consts if consts else [0.0], dtype=np.float64),
        offsets=np.asarray(offsets, dtype=np.intc),
        depth=depth,
        dim=1 + n + m,
    )
