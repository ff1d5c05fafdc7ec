"""Potential expressions: infix parser and exact forward-mode differentiation.

Potentials arrive as text like ``(x^2-1)^2*(1+0.3*x)``. They are parsed into an
immutable arithmetic tree and evaluated with dual numbers (first order) or
truncated second-order jets (Hessians), never with finite differences: the
downstream prefactor formulas are ratios of Hessian determinants and would be
swamped by differencing noise.

Grammar (infix, ``^`` right-associative, unary minus binds tighter than the
base of ``^`` so ``-x^2 == (-x)^2``):

    expr   := term (('+'|'-') term)*
    term   := power (('*'|'/') power)*
    power  := base ('^' power)?
    base   := '-' base | atom
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

Only twice-differentiable primitives are admitted; ``abs``, ``floor`` and
friends are rejected at parse time.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
import re

import numpy as np

__all__ = [
    "ParseError",
    "EvalDomainError",
    "ExpressionTree",
    "parse_potential",
    "evaluate",
    "gradient",
    "hessian",
    "value_many",
    "gradient_many",
]

SMOOTH_FUNCS = ("exp", "log", "sin", "cos", "sqrt", "tanh")
NON_SMOOTH = ("abs", "floor", "ceil", "sign", "min", "max", "mod", "heaviside", "relu", "step")


class ParseError(ValueError):
    """Malformed expression; carries the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalDomainError(ArithmeticError):
    """Evaluation left the domain of a primitive (log of a non-positive value, ...)."""

    def __init__(self, message, subexpr):
        super().__init__(f"{message} in '{subexpr}'")
        self.subexpr = subexpr


# ---------------------------------------------------------------------------
# dual numbers and second-order jets
# ---------------------------------------------------------------------------


class Dual:
    """First-order forward-mode number; components may be scalars or ndarrays."""

    __slots__ = ("val", "grad")
    __array_ufunc__ = None  # keep numpy from swallowing Dual operands

    def __init__(self, val, grad):
        self.val = val
        self.grad = tuple(grad)

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val + o.val, tuple(a + b for a, b in zip(self.grad, o.grad)))
        return Dual(self.val + o, self.grad)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val - o.val, tuple(a - b for a, b in zip(self.grad, o.grad)))
        return Dual(self.val - o, self.grad)

    def __rsub__(self, o):
        return Dual(o - self.val, tuple(-a for a in self.grad))

    def __neg__(self):
        return Dual(-self.val, tuple(-a for a in self.grad))

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(
                self.val * o.val,
                tuple(a * o.val + b * self.val for a, b in zip(self.grad, o.grad)),
            )
        return Dual(self.val * o, tuple(a * o for a in self.grad))

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            _check_nonzero(o.val)
            inv = 1.0 / o.val
            return Dual(
                self.val * inv,
                tuple((a - self.val * inv * b) * inv for a, b in zip(self.grad, o.grad)),
            )
        _check_nonzero(o)
        return Dual(self.val / o, tuple(a / o for a in self.grad))

    def __rtruediv__(self, o):
        _check_nonzero(self.val)
        inv = 1.0 / self.val
        v = o * inv
        return Dual(v, tuple(-v * inv * a for a in self.grad))

    def __pow__(self, p):
        if isinstance(p, Dual):
            if p._is_const():
                return self.__pow__(p.val)
            return (self.log() * p).exp()
        if _is_integral(p):
            n = int(p)
            if n == 0:
                return Dual(np.ones_like(self.val * 1.0), tuple(0.0 * a for a in self.grad))
            v = self.val ** (n - 1)
            return Dual(v * self.val, tuple(n * v * a for a in self.grad))
        _check_positive(self.val, "non-integer power of a non-positive base")
        v = self.val ** (p - 1.0)
        return Dual(v * self.val, tuple(p * v * a for a in self.grad))

    def _is_const(self):
        return all(np.all(np.asarray(g) == 0) for g in self.grad)

    def _chain(self, v, dv):
        return Dual(v, tuple(dv * a for a in self.grad))

    def exp(self):
        v = np.exp(self.val)
        return self._chain(v, v)

    def log(self):
        _check_positive(self.val, "log of a non-positive value")
        return self._chain(np.log(self.val), 1.0 / self.val)

    def sin(self):
        return self._chain(np.sin(self.val), np.cos(self.val))

    def cos(self):
        return self._chain(np.cos(self.val), -np.sin(self.val))

    def sqrt(self):
        _check_positive(self.val, "sqrt of a non-positive value")
        v = np.sqrt(self.val)
        return self._chain(v, 0.5 / v)

    def tanh(self):
        v = np.tanh(self.val)
        return self._chain(v, 1.0 - v * v)


class Jet2:
    """Second-order jet: value, gradient and the full symmetric Hessian block.

    Both Hessian triangles are filled from the same arithmetic, so the output
    is exactly symmetric.
    """

    __slots__ = ("val", "grad", "hess")
    __array_ufunc__ = None

    def __init__(self, val, grad, hess):
        self.val = val
        self.grad = grad  # list, length d
        self.hess = hess  # list of lists, d x d

    @classmethod
    def seed(cls, value, index, dim):
        g = [1.0 if i == index else 0.0 for i in range(dim)]
        hh = [[0.0] * dim for _ in range(dim)]
        return cls(value, g, hh)

    @property
    def dim(self):
        return len(self.grad)

    def _zip(self, o, fv, fg, fh):
        d = self.dim
        g = [fg(self.grad[i], o.grad[i]) for i in range(d)]
        h = [[fh(i, j) for j in range(d)] for i in range(d)]
        return Jet2(fv(self.val, o.val), g, h)

    def __add__(self, o):
        if isinstance(o, Jet2):
            return self._zip(
                o,
                lambda a, b: a + b,
                lambda a, b: a + b,
                lambda i, j: self.hess[i][j] + o.hess[i][j],
            )
        return Jet2(self.val + o, list(self.grad), [row[:] for row in self.hess])

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Jet2):
            return self._zip(
                o,
                lambda a, b: a - b,
                lambda a, b: a - b,
                lambda i, j: self.hess[i][j] - o.hess[i][j],
            )
        return Jet2(self.val - o, list(self.grad), [row[:] for row in self.hess])

    def __rsub__(self, o):
        return (-self).__add__(o)

    def __neg__(self):
        return Jet2(-self.val, [-a for a in self.grad], [[-x for x in row] for row in self.hess])

    def __mul__(self, o):
        if isinstance(o, Jet2):
            d = self.dim
            g = [self.grad[i] * o.val + o.grad[i] * self.val for i in range(d)]
            h = [
                [
                    self.hess[i][j] * o.val
                    + o.hess[i][j] * self.val
                    + self.grad[i] * o.grad[j]
                    + self.grad[j] * o.grad[i]
                    for j in range(d)
                ]
                for i in range(d)
            ]
            return Jet2(self.val * o.val, g, h)
        return Jet2(self.val * o, [a * o for a in self.grad], [[x * o for x in row] for row in self.hess])

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet2):
            return self * o._recip()
        _check_nonzero(o)
        return self * (1.0 / o)

    def __rtruediv__(self, o):
        return self._recip() * o

    def _recip(self):
        _check_nonzero(self.val)
        inv = 1.0 / self.val
        return self._chain(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __pow__(self, p):
        if isinstance(p, Jet2):
            if p._is_const():
                return self.__pow__(p.val)
            return (self.log() * p).exp()
        if _is_integral(p):
            n = int(p)
            if n == 0:
                d = self.dim
                return Jet2(1.0 + 0.0 * self.val, [0.0] * d, [[0.0] * d for _ in range(d)])
            if n == 1:
                return self._chain(self.val, 1.0, 0.0)
            base = self.val ** (n - 2)
            return self._chain(base * self.val * self.val, n * base * self.val, n * (n - 1) * base)
        _check_positive(self.val, "non-integer power of a non-positive base")
        return self._chain(
            self.val ** p, p * self.val ** (p - 1.0), p * (p - 1.0) * self.val ** (p - 2.0)
        )

    def _is_const(self):
        if any(np.any(np.asarray(a) != 0) for a in self.grad):
            return False
        return all(np.all(np.asarray(x) == 0) for row in self.hess for x in row)

    def _chain(self, v, d1, d2):
        d = self.dim
        g = [d1 * self.grad[i] for i in range(d)]
        h = [
            [d1 * self.hess[i][j] + d2 * self.grad[i] * self.grad[j] for j in range(d)]
            for i in range(d)
        ]
        return Jet2(v, g, h)

    def exp(self):
        v = np.exp(self.val)
        return self._chain(v, v, v)

    def log(self):
        _check_positive(self.val, "log of a non-positive value")
        inv = 1.0 / self.val
        return self._chain(np.log(self.val), inv, -inv * inv)

    def sin(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(c, -s, -c)

    def sqrt(self):
        _check_positive(self.val, "sqrt of a non-positive value")
        v = np.sqrt(self.val)
        return self._chain(v, 0.5 / v, -0.25 / (v * self.val))

    def tanh(self):
        t = np.tanh(self.val)
        sech2 = 1.0 - t * t
        return self._chain(t, sech2, -2.0 * t * sech2)


class _DomainViolation(ArithmeticError):
    pass


def _check_positive(v, what):
    bad = np.any(np.asarray(v) <= 0)
    if bad:
        raise _DomainViolation(what)


def _check_nonzero(v):
    if np.any(np.asarray(v) == 0):
        raise _DomainViolation("division by zero")


def _is_integral(p):
    return isinstance(p, (int, float)) and float(p).is_integer()


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float

    def ev(self, env):
        return self.value

    def unparse(self):
        if self.value == int(self.value) and abs(self.value) < 1e16:
            return str(int(self.value))
        return repr(self.value)


@dataclass(frozen=True)
class Var:
    name: str

    def ev(self, env):
        return env[self.name]

    def unparse(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    arg: object

    def ev(self, env):
        return -self.arg.ev(env)

    def unparse(self):
        return f"(-{self.arg.unparse()})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def ev(self, env):
        a = self.left.ev(env)
        b = self.right.ev(env)
        try:
            if self.op == "+":
                return a + b
            if self.op == "-":
                return a - b
            if self.op == "*":
                return a * b
            if self.op == "/":
                return _div(a, b)
            return _pow(a, b)
        except _DomainViolation as exc:
            raise EvalDomainError(str(exc), self.unparse()) from None

    def unparse(self):
        return f"({self.left.unparse()}{self.op}{self.right.unparse()})"


@dataclass(frozen=True)
class Call:
    func: str
    arg: object

    def ev(self, env):
        a = self.arg.ev(env)
        try:
            if isinstance(a, (Dual, Jet2)):
                return getattr(a, self.func)()
            if self.func == "log":
                _check_positive(a, "log of a non-positive value")
            elif self.func == "sqrt":
                _check_positive(a, "sqrt of a non-positive value")
            return getattr(np, self.func)(a)
        except _DomainViolation as exc:
            raise EvalDomainError(str(exc), self.unparse()) from None

    def unparse(self):
        return f"{self.func}({self.arg.unparse()})"


def _div(a, b):
    if not isinstance(b, (Dual, Jet2)):
        _check_nonzero(b)
    return a / b


def _pow(a, b):
    if isinstance(a, (Dual, Jet2)):
        return a ** b
    if isinstance(b, (Dual, Jet2)):
        if b._is_const():
            b = b.val
        else:
            _check_positive(a, "variable exponent with non-positive base")
            return (b * math.log(a) if np.isscalar(a) else b * np.log(a)).exp()
    if _is_integral(b):
        return a ** b
    _check_positive(a, "non-integer power of a non-positive base")
    return a ** b


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------


_NUM_RE = re.compile(r"\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


def _tokenize(src):
    toks = []
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in "+-*/^()":
            toks.append((c, c, i))
            i += 1
            continue
        m = _NUM_RE.match(src, i)
        if m:
            toks.append(("num", float(m.group()), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(src, i)
        if m:
            toks.append(("ident", m.group(), i))
            i = m.end()
            continue
        raise ParseError(f"unexpected character '{c}'", i)
    toks.append(("end", None, n))
    return toks


class _Parser:
    def __init__(self, src, variables):
        self.src = src
        self.toks = _tokenize(src)
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind):
        t = self.take()
        if t[0] != kind:
            raise ParseError(f"expected '{kind}'", t[2])
        return t

    def parse(self):
        node = self.expr()
        t = self.peek()
        if t[0] != "end":
            raise ParseError(f"unexpected token '{t[1]}'", t[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in "+-":
            op = self.take()[0]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.power()
        while self.peek()[0] in "*/":
            op = self.take()[0]
            node = BinOp(op, node, self.power())
        return node

    def power(self):
        node = self.base()
        if self.peek()[0] == "^":
            self.take()
            node = BinOp("^", node, self.power())
        return node

    def base(self):
        if self.peek()[0] == "-":
            self.take()
            return Neg(self.base())
        return self.atom()

    def atom(self):
        t = self.take()
        kind, val, off = t
        if kind == "num":
            return Num(val)
        if kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            if self.peek()[0] == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                if val in NON_SMOOTH:
                    raise ParseError(f"non-smooth primitive '{val}' is not admitted", off)
                if val not in SMOOTH_FUNCS:
                    raise ParseError(f"unknown function '{val}'", off)
                return Call(val, arg)
            if val in self.variables:
                return Var(val)
            if val in NON_SMOOTH:
                raise ParseError(f"non-smooth primitive '{val}' is not admitted", off)
            raise ParseError(f"unknown identifier '{val}'", off)
        raise ParseError("expected a value", off)


# ---------------------------------------------------------------------------
# public surface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpressionTree:
    """Immutable parsed potential with its declared variables."""

    root: object
    variables: tuple

    @property
    def dim(self):
        return len(self.variables)

    def unparse(self):
        return self.root.unparse()

    def free_vars(self):
        found = set()

        def walk(node):
            if isinstance(node, Var):
                found.add(node.name)
            elif isinstance(node, Neg):
                walk(node.arg)
            elif isinstance(node, BinOp):
                walk(node.left)
                walk(node.right)
            elif isinstance(node, Call):
                walk(node.arg)

        walk(self.root)
        return found

    # point-wise evaluation -------------------------------------------------

    def value(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        env = {v: p[i] for i, v in enumerate(self.variables)}
        return float(self.root.ev(env))

    def grad(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        d = self.dim
        env = {
            v: Dual(p[i], tuple(1.0 if j == i else 0.0 for j in range(d)))
            for i, v in enumerate(self.variables)
        }
        out = self.root.ev(env)
        if not isinstance(out, Dual):  # constant expression
            return np.zeros(d)
        return np.array(out.grad, dtype=float)

    def hess(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        d = self.dim
        env = {v: Jet2.seed(p[i], i, d) for i, v in enumerate(self.variables)}
        out = self.root.ev(env)
        if not isinstance(out, Jet2):
            return np.zeros((d, d))
        return np.array(out.hess, dtype=float)

    # vectorized evaluation --------------------------------------------------

    def value_at(self, *coords):
        arrs = [np.asarray(c, dtype=float) for c in coords]
        env = {v: arrs[i] for i, v in enumerate(self.variables)}
        out = np.asarray(self.root.ev(env), dtype=float)
        shape = np.broadcast_shapes(*(a.shape for a in arrs))
        if out.shape != shape:  # constant subexpression collapsed the shape
            out = np.broadcast_to(out, shape).copy()
        return out

    def grad_at(self, *coords):
        d = self.dim
        arrs = [np.asarray(c, dtype=float) for c in coords]
        env = {
            v: Dual(arrs[i], tuple(1.0 if j == i else 0.0 for j in range(d)))
            for i, v in enumerate(self.variables)
        }
        out = self.root.ev(env)
        shape = np.broadcast_shapes(*(a.shape for a in arrs))
        if not isinstance(out, Dual):
            return [np.zeros(shape) for _ in range(d)]
        return [np.broadcast_to(np.asarray(g, dtype=float), shape).copy() for g in out.grad]


def parse_potential(src, dim):
    """Parse ``src`` into an ExpressionTree over x (dim 1) or x, y (dim 2)."""
    if not isinstance(src, str) or not src.strip():
        raise ParseError("empty expression", 0)
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    variables = ("x",) if dim == 1 else ("x", "y")
    root = _Parser(src, variables).parse()
    return ExpressionTree(root, variables)


def evaluate(tree, p):
    return tree.value(p)


def gradient(tree, p):
    return tree.grad(p)


def hessian(tree, p):
    return tree.hess(p)


def value_many(tree, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return tree.value_at(*(pts[:, i] for i in range(tree.dim)))


def gradient_many(tree, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    comps = tree.grad_at(*(pts[:, i] for i in range(tree.dim)))
    return np.stack(comps, axis=-1)
