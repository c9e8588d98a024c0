"""Minimal reverse-mode automatic differentiation over numpy arrays.

Graphs are built eagerly: every operation computes its value immediately and
records a vector-Jacobian product closure.  ``backward`` walks the recorded
nodes in decreasing creation id, which is a reverse topological order because
a node is always created after its inputs.

Optimizable parameters live in a :class:`ParamStore`, a flat float64 buffer
split into named tensors and named groups (each group carries its own
learning rate and weight decay).
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Node",
    "NonFiniteError",
    "ParamStore",
    "ParamGroup",
    "GradCheckReport",
    "constant",
    "variable",
    "custom",
    "forward",
    "backward",
    "grad_check",
    "no_grad",
    "grad_enabled",
    "finite_checks",
]

EPS_NORM = 1e-12

_ids = itertools.count()
_state = {"grad": True, "finite": True}


class NonFiniteError(FloatingPointError):
    """A node produced NaN or Inf."""

    def __init__(self, op: str, where: str = "forward"):
        super().__init__(f"non-finite value in {where} of op '{op}'")
        self.op = op


@contextlib.contextmanager
def no_grad():
    """Build values only; no backward closures are recorded."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


@contextlib.contextmanager
def finite_checks(enabled: bool):
    prev = _state["finite"]
    _state["finite"] = enabled
    try:
        yield
    finally:
        _state["finite"] = prev


class Node:
    """One value in a computation graph.

    ``op`` names the primitive that produced the value.  Leaves are either
    constants (``op == "const"``), free variables (``op == "var"``) or
    parameters bound to a :class:`ParamStore` slice (``op == "param"``).
    """

    __slots__ = ("id", "op", "inputs", "value", "grad", "requires_grad", "_vjp", "_sink")
    __array_priority__ = 100.0

    def __init__(self, value, op="const", inputs=(), vjp=None, requires_grad=False, sink=None):
        self.id = next(_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self._vjp = vjp
        self._sink = sink

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={np.shape(self.value)})"

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def numpy(self) -> np.ndarray:
        return np.asarray(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64))


def constant(x) -> Node:
    return Node(np.asarray(x, dtype=np.float64))


def variable(x) -> Node:
    """A free leaf that accumulates its gradient into ``node.grad``."""
    return Node(np.array(x, dtype=np.float64), op="var", requires_grad=True)


def _finite_or_raise(value, op):
    if _state["finite"] and not np.all(np.isfinite(value)):
        raise NonFiniteError(op)


def custom(op: str, value, inputs: Sequence, vjp: Callable) -> Node:
    """Record a primitive.

    ``vjp(g)`` must return one adjoint (or ``None``) per input, each shaped
    like that input's value.
    """
    inputs = tuple(_as_node(x) for x in inputs)
    _finite_or_raise(value, op)
    req = _state["grad"] and any(x.requires_grad for x in inputs)
    if not req:
        return Node(value, op=op)
    return Node(value, op=op, inputs=inputs, vjp=vjp, requires_grad=True)


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    sa, sb = a.shape, b.shape
    return custom("add", a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    sa, sb = a.shape, b.shape
    return custom("add", a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a) -> Node:
    a = _as_node(a)
    return custom("mul", -a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    return custom("mul", av * bv, (a, b),
                  lambda g: (_unbroadcast(g * bv, np.shape(av)) if a.requires_grad else None,
                             _unbroadcast(g * av, np.shape(bv)) if b.requires_grad else None))


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        ga = _unbroadcast(g / bv, np.shape(av)) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bv, np.shape(bv)) if b.requires_grad else None
        return ga, gb

    return custom("mul", out, (a, b), vjp)


def exp(a) -> Node:
    a = _as_node(a)
    out = np.exp(a.value)
    return custom("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = _as_node(a)
    av = a.value
    return custom("log", np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Node:
    a = _as_node(a)
    out = np.sqrt(a.value)
    return custom("pow", out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Node:
    a = _as_node(a)
    av = a.value
    return custom("pow", av * av, (a,), lambda g: (2.0 * g * av,))


def _int_power(x, n):
    result = np.ones_like(x)
    base = x
    while n:
        if n & 1:
            result = result * base
        n >>= 1
        if n:
            base = base * base
    return result


def pow_int(a, n: int) -> Node:
    """``a**n`` for a non-negative integer ``n`` by repeated squaring.

    Valid for negative bases, unlike a log-based power.
    """
    if n < 0 or int(n) != n:
        raise ValueError("pow_int needs a non-negative integer exponent")
    a = _as_node(a)
    av = a.value
    if n == 0:
        return constant(np.ones_like(av))
    out = _int_power(av, n)
    return custom("pow", out, (a,), lambda g: (g * n * _int_power(av, n - 1),))


def relu(a) -> Node:
    a = _as_node(a)
    av = a.value
    return custom("relu", np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


def sigmoid(a) -> Node:
    a = _as_node(a)
    out = expit(a.value)
    return custom("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a, beta: float = 1.0) -> Node:
    """``log(1 + exp(beta * a)) / beta``."""
    a = _as_node(a)
    z = beta * a.value
    e = np.exp(-np.abs(z))
    out = (np.maximum(z, 0.0) + np.log1p(e)) / beta
    # expit(z) from the same exponential
    sig = np.where(z >= 0, 1.0, e) / (1.0 + e)
    return custom("softplus", out, (a,), lambda g: (g * sig,))


def clamp(a, lo=None, hi=None) -> Node:
    a = _as_node(a)
    av = a.value
    out = np.clip(av, lo, hi)
    inside = np.ones(np.shape(av), dtype=bool)
    if lo is not None:
        inside &= av >= lo
    if hi is not None:
        inside &= av <= hi
    return custom("select", out, (a,), lambda g: (g * inside,))


def select(cond, a, b) -> Node:
    """Elementwise ``cond ? a : b`` with a constant boolean condition."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _as_node(a), _as_node(b)
    sa, sb = a.shape, b.shape
    out = np.where(cond, a.value, b.value)
    return custom("select", out, (a, b),
                  lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                             _unbroadcast(np.where(cond, 0.0, g), sb)))


def stop_gradient(a) -> Node:
    """Forward the value, propagate a zero adjoint."""
    a = _as_node(a)
    return Node(a.value, op="stop_gradient")


# ---------------------------------------------------------------- reductions / shape


def sum_(a, axis=None, keepdims=False) -> Node:
    a = _as_node(a)
    shape = a.shape
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return custom("sum", out, (a,), vjp)


def mean(a, axis=None) -> Node:
    a = _as_node(a)
    n = a.value.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis) * (1.0 / n)


def reshape(a, shape) -> Node:
    a = _as_node(a)
    old = a.shape
    return custom("reshape", np.reshape(a.value, shape), (a,), lambda g: (np.reshape(g, old),))


def broadcast_to(a, shape) -> Node:
    a = _as_node(a)
    old = a.shape
    return custom("reshape", np.broadcast_to(a.value, shape), (a,), lambda g: (_unbroadcast(g, old),))


def _is_basic_key(key):
    if not isinstance(key, tuple):
        key = (key,)
    return all(k is None or k is Ellipsis or isinstance(k, (slice, int, np.integer)) for k in key)


def getitem(a, key) -> Node:
    a = _as_node(a)
    shape = a.shape
    basic = _is_basic_key(key)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[key] += g
        else:
            np.add.at(out, key, g)
        return (out,)

    return custom("select", a.value[key], (a,), vjp)


def concat(parts: Sequence, axis: int = -1) -> Node:
    parts = [_as_node(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.value for p in parts], axis=axis)
    return custom("concat", out, parts, lambda g: tuple(np.split(g, splits, axis=axis)))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Node:
    """``a @ b`` for a 2-D left operand and 1-D or 2-D right operand."""
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value

    def vjp(g):
        if bv.ndim == 1:
            ga = np.outer(g, bv) if a.requires_grad else None
            gb = av.T @ g if b.requires_grad else None
        else:
            ga = g @ bv.T if a.requires_grad else None
            gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return custom("matvec", av @ bv, (a, b), vjp)


def transpose(a) -> Node:
    a = _as_node(a)
    return custom("reshape", a.value.T, (a,), lambda g: (g.T,))


def matvec(mats, v) -> Node:
    """Batched ``mats[p] @ v[p]`` with constant matrices ``(P, 3, 3)``."""
    mats = np.asarray(mats, dtype=np.float64)
    v = _as_node(v)
    out = np.einsum("pij,pj->pi", mats, v.value)
    return custom("matvec", out, (v,), lambda g: (np.einsum("pij,pi->pj", mats, g),))


def dot(a, b) -> Node:
    """Inner product along the last axis."""
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    out = np.sum(av * bv, axis=-1)

    def vjp(g):
        ge = np.asarray(g)[..., None]
        ga = _unbroadcast(ge * bv, np.shape(av)) if a.requires_grad else None
        gb = _unbroadcast(ge * av, np.shape(bv)) if b.requires_grad else None
        return ga, gb

    return custom("dot", out, (a, b), vjp)


def norm(a, eps: float = 0.0) -> Node:
    """Euclidean norm along the last axis; zero subgradient at the origin."""
    a = _as_node(a)
    av = a.value
    out = np.sqrt(np.sum(av * av, axis=-1))

    def vjp(g):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.asarray(g)[..., None] * av / safe[..., None] * (out > 0.0)[..., None],)

    return custom("normalize", out + eps, (a,), vjp)


def normalize(a, eps: float = EPS_NORM) -> Node:
    """``a / (|a| + eps)`` along the last axis."""
    a = _as_node(a)
    av = a.value
    n = np.sqrt(np.sum(av * av, axis=-1, keepdims=True))
    d = n + eps
    out = av / d

    def vjp(g):
        gv = np.sum(av * g, axis=-1, keepdims=True)
        safe = np.where(n > 0.0, n, 1.0)
        return (g / d - av * gv / (safe * d * d) * (n > 0.0),)

    return custom("normalize", out, (a,), vjp)


def take(a, idx) -> Node:
    """Rows of ``a`` gathered by an integer index array."""
    a = _as_node(a)
    idx = np.asarray(idx)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return custom("select", a.value[idx], (a,), vjp)


def scatter(a, idx, size: int, fill: float = 0.0) -> Node:
    """Place the rows of ``a`` at unique positions ``idx`` of a length-``size`` array."""
    a = _as_node(a)
    idx = np.asarray(idx)
    out = np.full((size,) + a.shape[1:], fill, dtype=np.float64)
    out[idx] = a.value
    return custom("select", out, (a,), lambda g: (np.asarray(g)[idx],))


# ---------------------------------------------------------------- volume rendering primitives


def _exclusive_transmittance(alpha):
    one_minus = 1.0 - alpha
    t = np.ones_like(alpha)
    if alpha.shape[1] > 1:
        t[:, 1:] = np.cumprod(one_minus[:, :-1], axis=1)
    return t


def composite(alpha, q) -> Node:
    """Front-to-back accumulation ``sum_k T_k alpha_k q_k``.

    ``alpha`` is ``(R, K)``; ``q`` is ``(R, K)`` or ``(R, K, C)``.  The
    adjoint for ``alpha`` uses the suffix recursion
    ``rest_k = alpha_{k+1} q_{k+1} + (1 - alpha_{k+1}) rest_{k+1}`` so no
    division by ``1 - alpha`` ever happens.
    """
    alpha, q = _as_node(alpha), _as_node(q)
    av, qv = alpha.value, q.value
    trans = _exclusive_transmittance(av)
    w = trans * av
    wq = w if qv.ndim == 2 else w[..., None]
    out = np.sum(wq * qv, axis=1)

    def vjp(g):
        g = np.asarray(g)
        if qv.ndim == 2:
            gq = (g[:, None] * w) if q.requires_grad else None
        else:
            gq = (g[:, None, :] * w[..., None]) if q.requires_grad else None
        ga = None
        if alpha.requires_grad:
            rest = np.zeros_like(qv)
            for k in range(av.shape[1] - 2, -1, -1):
                a1 = av[:, k + 1] if qv.ndim == 2 else av[:, k + 1, None]
                rest[:, k] = a1 * qv[:, k + 1] + (1.0 - a1) * rest[:, k + 1]
            diff = qv - rest
            if qv.ndim == 3:
                diff = np.sum(diff * g[:, None, :], axis=-1)
            else:
                diff = diff * g[:, None]
            ga = trans * diff
        return ga, gq

    return custom("composite", out, (alpha, q), vjp)


def transmittance(alpha) -> Node:
    """Remaining transmittance ``prod_k (1 - alpha_k)`` per row."""
    alpha = _as_node(alpha)
    om = 1.0 - alpha.value
    out = np.prod(om, axis=1)

    def vjp(g):
        pre = np.ones_like(om)
        pre[:, 1:] = np.cumprod(om[:, :-1], axis=1)
        suf = np.ones_like(om)
        suf[:, :-1] = np.cumprod(om[:, ::-1][:, :-1], axis=1)[:, ::-1]
        return (-np.asarray(g)[:, None] * pre * suf,)

    return custom("composite", out, (alpha,), vjp)


# ---------------------------------------------------------------- driver


def forward(root: Node) -> np.ndarray:
    """Return the root value after checking every reachable node is finite."""
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        if not np.all(np.isfinite(node.value)):
            raise NonFiniteError(node.op)
        stack.extend(node.inputs)
    return root.value


def _reachable(root: Node):
    order = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in order or not node.requires_grad:
            continue
        order[node.id] = node
        stack.extend(node.inputs)
    return [order[k] for k in sorted(order, reverse=True)]


def backward(root: Node, seed=None) -> None:
    """Accumulate ``d(seed . root)/d(leaf)`` into every reachable leaf.

    Parameters accumulate into their :class:`ParamStore` gradient slots;
    free variables accumulate into ``node.grad``.
    """
    rv = np.asarray(root.value)
    if seed is None:
        if rv.size != 1:
            raise ValueError("seed required for a non-scalar root")
        seed = np.ones_like(rv)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != rv.shape:
        raise ValueError(f"seed shape {seed.shape} does not match root shape {rv.shape}")
    if not root.requires_grad:
        return
    adj = {root.id: seed}
    for node in _reachable(root):
        g = adj.pop(node.id, None)
        if g is None:
            continue
        if node._vjp is None:
            if node._sink is not None:
                node._sink(g)
            else:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for inp, gi in zip(node.inputs, node._vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = adj.get(inp.id)
            adj[inp.id] = gi if prev is None else prev + gi


# ---------------------------------------------------------------- parameters


@dataclass
class ParamGroup:
    name: str
    lr: float = 1e-3
    weight_decay: float = 0.0


@dataclass
class _Entry:
    group: str
    offset: int
    shape: tuple


DEFAULT_GROUPS = (
    "spatial-mlp",
    "hash-table",
    "brdf-mlp",
    "shadow-mlp",
    "sharpness",
    "light-dirs",
    "light-log-intensity",
)


class ParamStore:
    """Flat parameter buffer with gradient slots and named groups."""

    def __init__(self, groups: Iterable[ParamGroup] | None = None):
        if groups is None:
            groups = [ParamGroup(name) for name in DEFAULT_GROUPS]
        self.groups = {g.name: g for g in groups}
        self.values = np.zeros(0)
        self.grads = np.zeros(0)
        self._entries: dict[str, _Entry] = {}

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return self.values.size

    def names(self):
        return list(self._entries)

    def add(self, name: str, init, group: str) -> None:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already registered")
        if group not in self.groups:
            raise KeyError(f"unknown parameter group {group!r}")
        init = np.asarray(init, dtype=np.float64)
        self._entries[name] = _Entry(group, self.values.size, init.shape)
        self.values = np.concatenate([self.values, init.ravel()])
        self.grads = np.concatenate([self.grads, np.zeros(init.size)])

    def _slice(self, name):
        e = self._entries[name]
        return slice(e.offset, e.offset + int(np.prod(e.shape, dtype=np.int64)))

    def __getitem__(self, name) -> np.ndarray:
        return self.values[self._slice(name)].reshape(self._entries[name].shape)

    def __setitem__(self, name, value):
        self.values[self._slice(name)] = np.asarray(value, dtype=np.float64).ravel()

    def grad(self, name) -> np.ndarray:
        return self.grads[self._slice(name)].reshape(self._entries[name].shape)

    def group_of(self, name) -> str:
        return self._entries[name].group

    def shape_of(self, name) -> tuple:
        return self._entries[name].shape

    def node(self, name) -> Node:
        """Leaf bound to the current value; backward adds into ``grads``."""
        sl = self._slice(name)
        shape = self._entries[name].shape
        grads = self.grads

        def sink(g):
            grads[sl] += np.asarray(g).ravel()

        return Node(self.values[sl].reshape(shape), op="param", requires_grad=_state["grad"], sink=sink)

    def zero_grad(self):
        self.grads[:] = 0.0

    def group_mask(self, group) -> np.ndarray:
        mask = np.zeros(self.values.size, dtype=bool)
        for name, e in self._entries.items():
            if e.group == group:
                mask[self._slice(name)] = True
        return mask

    def header(self) -> dict:
        return {
            "groups": {g.name: {"lr": g.lr, "weight_decay": g.weight_decay} for g in self.groups.values()},
            "params": [
                {"name": n, "group": e.group, "shape": list(e.shape), "offset": e.offset}
                for n, e in self._entries.items()
            ],
            "size": int(self.values.size),
        }

    def copy(self) -> "ParamStore":
        other = ParamStore([ParamGroup(g.name, g.lr, g.weight_decay) for g in self.groups.values()])
        other.values = self.values.copy()
        other.grads = self.grads.copy()
        other._entries = dict(self._entries)
        return other


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int
    worst: str = ""
    per_param: dict = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_err:.3e} over {self.checked} entries (worst: {self.worst})"


def _rel_err(a, n, floor):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(builder: Callable[[], Node], params, h: float = 1e-5, tol: float = 1e-4,
               max_entries: int | None = 64, floor: float = 1e-6, seed: int = 0) -> GradCheckReport:
    """Compare backward gradients against central differences.

    ``params`` is either ``(store, names)`` or a list of ``variable`` leaves
    that ``builder`` closes over.  At most ``max_entries`` entries per
    parameter are probed (chosen with a fixed RNG).  The relative error
    denominator is floored at ``floor`` so gradients that are both
    essentially zero do not blow the ratio up.
    """
    rng = np.random.default_rng(seed)
    if isinstance(params, tuple) and len(params) == 2 and isinstance(params[0], ParamStore):
        store, names = params
        store.zero_grad()
        backward(builder())
        targets = []
        for name in names:
            arr = store.values[store._slice(name)]
            targets.append((name, arr, store.grads[store._slice(name)].copy()))
    else:
        leaves = list(params)
        for leaf in leaves:
            leaf.grad = None
        backward(builder())
        targets = []
        for i, leaf in enumerate(leaves):
            g = np.zeros(leaf.value.shape) if leaf.grad is None else leaf.grad
            targets.append((f"leaf{i}", leaf.value.reshape(-1), g.reshape(-1).copy()))

    worst, worst_name, per, checked = 0.0, "", {}, 0
    for name, flat, analytic in targets:
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            # bias probes towards entries that actually carry gradient
            nz = np.flatnonzero(analytic)
            pool = nz if nz.size >= max_entries // 2 else idx
            idx = np.sort(rng.choice(pool, size=min(max_entries, pool.size), replace=False))
        errs = []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = float(np.sum(builder().value))
            flat[i] = orig - h
            with no_grad():
                fm = float(np.sum(builder().value))
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            errs.append(_rel_err(analytic[i], num, floor))
        checked += len(idx)
        e = float(np.max(errs)) if errs else 0.0
        per[name] = e
        if e >= worst:
            worst, worst_name = e, name
    return GradCheckReport(worst, worst < tol, checked, worst_name, per)
