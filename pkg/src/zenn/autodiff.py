"""Scalar expression graphs with exact first and second derivatives.

An :class:`Expr` is an immutable node in a computation record built with
ordinary Python arithmetic::

    >>> x, y = Var("x"), Var("y")
    >>> f = x**2 * y
    >>> evaluate(f, {"x": 1.0, "y": 2.0})
    2.0
    >>> gradient(f, {"x": 1.0, "y": 2.0}, ["x", "y"])
    array([4., 1.])

Gradients use one reverse sweep. Hessians are assembled column by column
from forward-over-reverse passes: the forward evaluation carries a dual
tangent along ``e_i`` and the reverse sweep runs on dual numbers, so the
tangent part of each adjoint is one Hessian-vector product. Input spaces
here have at most three dimensions, so this is cheap.

The module-level functions :func:`exp`, :func:`log`, :func:`tanh`,
:func:`relu` and :func:`softplus` build nodes when given an ``Expr`` and
fall through to numpy (or jax.numpy for jax arrays) otherwise, so formulas
written with them evaluate on floats, arrays and graphs alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

Number = Union[int, float]

_UNARY = ("neg", "exp", "ln", "tanh", "relu", "pow")
_BINARY = ("add", "mul", "div")


class BindingError(LookupError):
    """A free variable of the expression has no value."""


class DomainError(ValueError):
    """An operation was applied outside its domain (ln of x <= 0, division by 0, ...)."""

    def __init__(self, message: str, node: "Expr"):
        super().__init__(message)
        self.node = node


class Expr:
    """Node of an immutable scalar computation graph."""

    __slots__ = ("op", "args", "payload", "_plan")

    def __init__(self, op: str, args: tuple = (), payload=None):
        self.op = op
        self.args = args
        self.payload = payload
        self._plan = None

    # -- construction helpers -------------------------------------------
    def __add__(self, other):
        return Expr("add", (self, as_expr(other)))

    def __radd__(self, other):
        return Expr("add", (as_expr(other), self))

    def __sub__(self, other):
        return Expr("add", (self, Expr("neg", (as_expr(other),))))

    def __rsub__(self, other):
        return Expr("add", (as_expr(other), Expr("neg", (self,))))

    def __mul__(self, other):
        return Expr("mul", (self, as_expr(other)))

    def __rmul__(self, other):
        return Expr("mul", (as_expr(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expr("div", (as_expr(other), self))

    def __neg__(self):
        return Expr("neg", (self,))

    def __pos__(self):
        return self

    def __pow__(self, other):
        if isinstance(other, Expr):
            return exp(other * log(self))
        return Expr("pow", (self,), float(other))

    def __rpow__(self, other):
        return exp(self * math.log(float(other)))

    def __repr__(self):
        if self.op == "const":
            return f"Const({self.payload!r})"
        if self.op == "var":
            return f"Var({self.payload!r})"
        if self.op == "pow":
            return f"pow({self.args[0]!r}, {self.payload!r})"
        return f"{self.op}({', '.join(map(repr, self.args))})"

    def __float__(self):
        if self.op == "const":
            return float(self.payload)
        raise TypeError("only constant expressions convert to float; use evaluate()")

    @property
    def variables(self) -> set[str]:
        return {name for op, name in zip(self._compile().ops, self._compile().payloads) if op == "var"}

    def _compile(self) -> "_Plan":
        if self._plan is None:
            self._plan = _Plan.build(self)
        return self._plan


def Var(name: str) -> Expr:
    return Expr("var", (), str(name))


def Const(value: Number) -> Expr:
    return Expr("const", (), float(value))


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


def _is_jax(x) -> bool:
    mod = type(x).__module__
    return mod.startswith("jax") or mod.startswith("jaxlib")


def _dispatch(op, np_fn, jnp_name):
    def fn(z):
        if isinstance(z, Expr):
            return Expr(op, (z,))
        if _is_jax(z):
            import jax.numpy as jnp

            return getattr(jnp, jnp_name)(z)
        return np_fn(z)

    return fn


exp = _dispatch("exp", np.exp, "exp")
log = _dispatch("ln", np.log, "log")
ln = log


def tanh(z):
    if isinstance(z, Expr):
        return Expr("tanh", (z,))
    if _is_jax(z):
        from zenn import _ops

        return _ops.tanh(z)
    return np.tanh(z)


def relu(z):
    """max(z, 0) with derivative 0 at z == 0."""
    if isinstance(z, Expr):
        return Expr("relu", (z,))
    if _is_jax(z):
        from zenn import _ops

        return _ops.relu0(z)
    return np.where(z > 0, z, 0.0) if isinstance(z, np.ndarray) else (z if z > 0 else 0.0)


def softplus(z):
    """ln(1 + e^z). On graphs this is the literal composition, valid for z < ~709."""
    if isinstance(z, Expr):
        return log(1.0 + exp(z))
    if _is_jax(z):
        from zenn import _ops

        return _ops.softplus(z)
    return np.logaddexp(0.0, z)


# ---------------------------------------------------------------------------
# compiled evaluation plan


@dataclass
class _Plan:
    nodes: list  # topological order, root last
    ops: list
    args: list  # tuples of plan indices
    payloads: list

    @classmethod
    def build(cls, root: Expr) -> "_Plan":
        index: dict[int, int] = {}
        nodes: list[Expr] = []
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in index:
                continue
            if expanded:
                index[id(node)] = len(nodes)
                nodes.append(node)
                continue
            stack.append((node, True))
            for a in node.args:
                if id(a) not in index:
                    stack.append((a, False))
        ops = [n.op for n in nodes]
        args = [tuple(index[id(a)] for a in n.args) for n in nodes]
        payloads = [n.payload for n in nodes]
        return cls(nodes, ops, args, payloads)


class _Dual:
    """a + b·ε with ε² = 0."""

    __slots__ = ("a", "b")

    def __init__(self, a, b=0.0):
        self.a = a
        self.b = b

    def __add__(self, o):
        if isinstance(o, _Dual):
            return _Dual(self.a + o.a, self.b + o.b)
        return _Dual(self.a + o, self.b)

    __radd__ = __add__

    def __mul__(self, o):
        if isinstance(o, _Dual):
            return _Dual(self.a * o.a, self.a * o.b + self.b * o.a)
        return _Dual(self.a * o, self.b * o)

    __rmul__ = __mul__

    def __neg__(self):
        return _Dual(-self.a, -self.b)


class _FloatRules:
    @staticmethod
    def value(op, xs, payload, node):
        if op == "add":
            return xs[0] + xs[1]
        if op == "mul":
            return xs[0] * xs[1]
        if op == "div":
            if xs[1] == 0.0:
                raise DomainError("division by zero", node)
            return xs[0] / xs[1]
        if op == "neg":
            return -xs[0]
        if op == "exp":
            try:
                return math.exp(xs[0])
            except OverflowError:
                raise DomainError(f"exp overflow at argument {xs[0]!r}", node) from None
        if op == "ln":
            if xs[0] <= 0.0:
                raise DomainError(f"ln of non-positive argument {xs[0]!r}", node)
            return math.log(xs[0])
        if op == "tanh":
            return math.tanh(xs[0])
        if op == "relu":
            return xs[0] if xs[0] > 0.0 else 0.0
        if op == "pow":
            return _pow(xs[0], payload, node)
        raise AssertionError(op)

    @staticmethod
    def partials(op, xs, y, payload):
        if op == "add":
            return (1.0, 1.0)
        if op == "mul":
            return (xs[1], xs[0])
        if op == "div":
            return (1.0 / xs[1], -xs[0] / (xs[1] * xs[1]))
        if op == "neg":
            return (-1.0,)
        if op == "exp":
            return (y,)
        if op == "ln":
            return (1.0 / xs[0],)
        if op == "tanh":
            return (1.0 - y * y,)
        if op == "relu":
            return (1.0 if xs[0] > 0.0 else 0.0,)
        if op == "pow":
            c = payload
            return (0.0,) if c == 0.0 else (c * _pow(xs[0], c - 1.0, None),)
        raise AssertionError(op)


def _pow(base, c, node):
    if base == 0.0 and c < 0.0:
        raise DomainError("zero raised to a negative power", node)
    if base < 0.0 and c != int(c):
        raise DomainError(f"negative base {base!r} with non-integer exponent {c!r}", node)
    return base**c


class _DualRules:
    @staticmethod
    def value(op, xs, payload, node):
        x0 = xs[0]
        if op == "add":
            return x0 + xs[1]
        if op == "mul":
            return x0 * xs[1]
        if op == "div":
            inv = _dual_inv(xs[1], node)
            return x0 * inv
        if op == "neg":
            return -x0
        if op == "exp":
            v = _FloatRules.value("exp", (x0.a,), None, node)
            return _Dual(v, v * x0.b)
        if op == "ln":
            v = _FloatRules.value("ln", (x0.a,), None, node)
            return _Dual(v, x0.b / x0.a)
        if op == "tanh":
            v = math.tanh(x0.a)
            return _Dual(v, (1.0 - v * v) * x0.b)
        if op == "relu":
            return _Dual(x0.a, x0.b) if x0.a > 0.0 else _Dual(0.0, 0.0)
        if op == "pow":
            c = payload
            v = _pow(x0.a, c, node)
            d = 0.0 if c == 0.0 else c * _pow(x0.a, c - 1.0, node)
            return _Dual(v, d * x0.b)
        raise AssertionError(op)

    @staticmethod
    def partials(op, xs, y, payload):
        x0 = xs[0]
        if op == "add":
            return (1.0, 1.0)
        if op == "mul":
            return (xs[1], x0)
        if op == "div":
            inv = _dual_inv(xs[1], None)
            return (inv, -(x0 * inv * inv))
        if op == "neg":
            return (-1.0,)
        if op == "exp":
            return (y,)
        if op == "ln":
            return (_dual_inv(x0, None),)
        if op == "tanh":
            return (1.0 + -(y * y),)
        if op == "relu":
            return (1.0 if x0.a > 0.0 else 0.0,)
        if op == "pow":
            c = payload
            if c == 0.0:
                return (0.0,)
            d1 = c * _pow(x0.a, c - 1.0, None)
            d2 = 0.0 if c == 1.0 else c * (c - 1.0) * _pow(x0.a, c - 2.0, None)
            return (_Dual(d1, d2 * x0.b),)
        raise AssertionError(op)


def _dual_inv(d: _Dual, node):
    if d.a == 0.0:
        raise DomainError("division by zero", node)
    return _Dual(1.0 / d.a, -d.b / (d.a * d.a))


def _forward(plan: _Plan, bindings: Mapping, rules, seed_var=None):
    vals = [None] * len(plan.ops)
    dual = rules is _DualRules
    for i, (op, a, payload) in enumerate(zip(plan.ops, plan.args, plan.payloads)):
        if op == "const":
            vals[i] = _Dual(payload, 0.0) if dual else payload
        elif op == "var":
            try:
                v = float(bindings[payload])
            except KeyError:
                raise BindingError(f"variable {payload!r} is not bound") from None
            vals[i] = _Dual(v, 1.0 if payload == seed_var else 0.0) if dual else v
        else:
            vals[i] = rules.value(op, [vals[j] for j in a], payload, plan.nodes[i])
    return vals


def _reverse(plan: _Plan, vals, rules, one):
    adj = [None] * len(plan.ops)
    adj[-1] = one
    for i in range(len(plan.ops) - 1, -1, -1):
        g = adj[i]
        op = plan.ops[i]
        if g is None or op in ("const", "var"):
            continue
        a = plan.args[i]
        parts = rules.partials(op, [vals[j] for j in a], vals[i], plan.payloads[i])
        for j, d in zip(a, parts):
            contrib = g * d if not isinstance(d, float) or d != 0.0 else None
            if contrib is None:
                continue
            adj[j] = contrib if adj[j] is None else adj[j] + contrib
    return adj


def _normalize_bindings(bindings: Mapping) -> dict:
    out = {}
    for k, v in bindings.items():
        if isinstance(k, Expr):
            if k.op != "var":
                raise TypeError("binding keys must be variable names or Var nodes")
            k = k.payload
        out[str(k)] = v
    return out


def _names(wrt: Iterable) -> list[str]:
    return [w.payload if isinstance(w, Expr) else str(w) for w in wrt]


def evaluate(expr, bindings: Mapping = {}) -> float:
    """Arithmetic value of ``expr`` with variables taken from ``bindings``."""
    expr = as_expr(expr)
    plan = expr._compile()
    return float(_forward(plan, _normalize_bindings(bindings), _FloatRules)[-1])


def gradient(expr, bindings: Mapping, wrt: Sequence) -> np.ndarray:
    """Reverse-accumulated partial derivatives with respect to ``wrt``."""
    expr = as_expr(expr)
    plan = expr._compile()
    b = _normalize_bindings(bindings)
    vals = _forward(plan, b, _FloatRules)
    adj = _reverse(plan, vals, _FloatRules, 1.0)
    return _collect(plan, adj, _names(wrt), lambda g: g)


def _collect(plan, adj, names, pick):
    pos = {n: k for k, n in enumerate(names)}
    out = np.zeros(len(names))
    for i, (op, payload) in enumerate(zip(plan.ops, plan.payloads)):
        if op == "var" and payload in pos and adj[i] is not None:
            out[pos[payload]] += pick(adj[i])
    return out


def _hessian_raw(plan, b, names):
    n = len(names)
    H = np.zeros((n, n))
    for i, name in enumerate(names):
        vals = _forward(plan, b, _DualRules, seed_var=name)
        adj = _reverse(plan, vals, _DualRules, _Dual(1.0, 0.0))
        H[:, i] = _collect(plan, adj, names, lambda g: g.b if isinstance(g, _Dual) else 0.0)
    return H


def hessian(expr, bindings: Mapping, wrt: Sequence) -> np.ndarray:
    """Symmetrized matrix of second partials with respect to ``wrt``."""
    return derivatives(expr, bindings, wrt, hessian=True).hessian


@dataclass(frozen=True)
class DerivativeReport:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray | None = None
    asymmetry: float = 0.0  # max |H - H^T| / max(1, max |H|) before symmetrization


def derivatives(expr, bindings: Mapping, wrt: Sequence, hessian: bool = False) -> DerivativeReport:
    expr = as_expr(expr)
    plan = expr._compile()
    b = _normalize_bindings(bindings)
    names = _names(wrt)
    vals = _forward(plan, b, _FloatRules)
    adj = _reverse(plan, vals, _FloatRules, 1.0)
    g = _collect(plan, adj, names, lambda v: v)
    if not hessian:
        return DerivativeReport(float(vals[-1]), g)
    H = _hessian_raw(plan, b, names)
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    asym = float(np.max(np.abs(H - H.T))) / scale if H.size else 0.0
    return DerivativeReport(float(vals[-1]), g, 0.5 * (H + H.T), asym)
