"""Reverse-mode automatic differentiation over dense float64 arrays.

A fresh graph (tape) is built on every forward pass and discarded after
``backward``.  Parameters enter as :class:`Node` leaves; plain numpy arrays
are treated as constants, so the same forward code runs with a tape (for
training) or without one (for rollouts, bootstrap targets and evaluation).
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class GradCheckError(RuntimeError):
    """A finite-difference probe produced a non-finite evaluation."""


def tensor(data) -> Array:
    """Coerce ``data`` to a float64 ndarray."""
    return np.asarray(data, dtype=np.float64)


class Node:
    """A value in the computation graph plus its accumulated gradient.

    ``grad`` is lazily populated by :func:`backward` and has the same shape
    as ``value``.  Leaves are created with ``Node(array)``; interior nodes
    carry a vector-Jacobian callback producing one gradient per parent.
    """

    __slots__ = ("value", "grad", "parents", "_vjp")

    def __init__(self, value, parents: tuple["Node", ...] = (), vjp=None):
        self.value = tensor(value)
        self.grad: Array | None = None
        self.parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape})"


def value_of(x) -> Array:
    """The plain array behind ``x`` (Node or array-like)."""
    return x.value if isinstance(x, Node) else tensor(x)


def _make(out: Array, *pairs) -> Node | Array:
    """Wrap ``out`` in a Node if any operand in ``pairs`` is one.

    ``pairs`` are (operand, vjp_callable) tuples; callables of non-Node
    operands are dropped, so constants never accumulate gradients.
    """
    parents = tuple(p for p, _ in pairs if isinstance(p, Node))
    if not parents:
        return out
    fns = tuple(f for p, f in pairs if isinstance(p, Node))
    return Node(out, parents, lambda g: tuple(f(g) for f in fns))


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise primitives (numpy broadcasting, gradients summed back to shape)

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _make(av + bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _make(av - bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _make(av * bv,
                 (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def neg(a):
    return _make(-value_of(a), (a, lambda g: -g))


def square(a):
    av = value_of(a)
    return _make(av * av, (a, lambda g: 2.0 * av * g))


def absolute(a):
    av = value_of(a)
    return _make(np.abs(av), (a, lambda g: g * np.sign(av)))


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0.0)
    return _make(out, (a, lambda g: g * (av > 0.0)))


def sigmoid(a):
    av = value_of(a)
    out = np.empty_like(av)
    pos = av >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (a, lambda g: g * out * (1.0 - out)))


def tanh(a):
    out = np.tanh(value_of(a))
    return _make(out, (a, lambda g: g * (1.0 - out * out)))


def activation(kind: str, x):
    """Elementwise activation by name (``relu``, ``sigmoid``, ``tanh``, ``linear``)."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation kind {kind!r}")


def bce_with_logits(logits, targets):
    """Elementwise binary cross-entropy from logits: softplus(z) - t*z.

    ``targets`` are treated as constants; stable for saturated logits where
    sigmoid rounds to exactly 0 or 1 in float64.
    """
    z = value_of(logits)
    t = value_of(targets)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - t * z
    def vjp(g):
        s = np.empty_like(z)
        pos = z >= 0.0
        s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        s[~pos] = ez / (1.0 + ez)
        return g * (s - t)
    return _make(out, (logits, vjp))


# ---------------------------------------------------------------------------
# contractions

_einsum_paths: dict = {}


def _opt_einsum(spec: str, x: Array, y: Array) -> Array:
    key = (spec, x.shape, y.shape)
    path = _einsum_paths.get(key)
    if path is None:
        path = np.einsum_path(spec, x, y, optimize="optimal")[0]
        _einsum_paths[key] = path
    return np.einsum(spec, x, y, optimize=path)


def einsum(spec: str, a, b):
    """Binary einsum with reverse-mode gradients.

    Index letters must be unique within each operand, no ellipsis; every
    input index must appear in the output or in the other operand (true for
    all plain contractions, which is all this package uses).
    """
    lhs, out_sub = spec.replace(" ", "").split("->")
    subs = lhs.split(",")
    if len(subs) != 2:
        raise ShapeError(f"einsum {spec!r}: exactly two operands required")
    sa, sb = subs
    for s in (sa, sb, out_sub):
        if "." in s or len(set(s)) != len(s):
            raise ShapeError(f"einsum {spec!r}: unsupported subscripts")
    for ch in sa:
        if ch not in out_sub and ch not in sb:
            raise ShapeError(f"einsum {spec!r}: index {ch!r} not recoverable")
    for ch in sb:
        if ch not in out_sub and ch not in sa:
            raise ShapeError(f"einsum {spec!r}: index {ch!r} not recoverable")
    av, bv = value_of(a), value_of(b)
    out = _opt_einsum(spec, av, bv)
    return _make(out,
                 (a, lambda g: _opt_einsum(f"{out_sub},{sb}->{sa}", g, bv)),
                 (b, lambda g: _opt_einsum(f"{out_sub},{sa}->{sb}", g, av)))


def linear(w, x, b):
    """Affine map ``w @ x + b`` for a single vector or a batch of rows.

    ``w`` is (out, in); ``x`` is (in,) or (batch, in); ``b`` is (out,).
    """
    wv, xv, bv = value_of(w), value_of(x), value_of(b)
    if wv.ndim != 2 or bv.ndim != 1 or wv.shape[0] != bv.shape[0]:
        raise ShapeError(f"linear: expected w (m, n) and b (m,), got w {wv.shape}, b {bv.shape}")
    n = wv.shape[1]
    if xv.ndim == 1:
        if xv.shape[0] != n:
            raise ShapeError(f"linear: expected x of shape ({n},), got {xv.shape}")
        return add(einsum("oi,i->o", w, x), b)
    if xv.ndim == 2:
        if xv.shape[1] != n:
            raise ShapeError(f"linear: expected x of shape (batch, {n}), got {xv.shape}")
        return add(einsum("oi,bi->bo", w, x), b)
    raise ShapeError(f"linear: x must be 1-D or 2-D, got shape {xv.shape}")


# ---------------------------------------------------------------------------
# reductions, reshaping, indexing

def reduce_sum(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape)
    return _make(out, (a, vjp))


def mean(a, axis=None):
    av = value_of(a)
    count = av.size if axis is None else av.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / count)


def softmax(a, axis: int = -1):
    """Stable softmax along ``axis`` (max-subtracted)."""
    av = value_of(a)
    if av.size == 0:
        raise ShapeError("softmax: empty input")
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    def vjp(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))
    return _make(out, (a, vjp))


def reshape(a, shape):
    av = value_of(a)
    return _make(av.reshape(shape), (a, lambda g: g.reshape(av.shape)))


def concat(parts: Sequence, axis: int = -1):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    pairs = []
    for i, p in enumerate(parts):
        def vjp(g, i=i):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]
        pairs.append((p, vjp))
    return _make(out, *pairs)


def stack(parts: Sequence, axis: int = 0):
    vals = [value_of(p) for p in parts]
    out = np.stack(vals, axis=axis)
    pairs = [(p, (lambda g, i=i: np.take(g, i, axis=axis))) for i, p in enumerate(parts)]
    return _make(out, *pairs)


def slice_axis(a, start: int, stop: int, axis: int = -1):
    av = value_of(a)
    sl = [slice(None)] * av.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    def vjp(g):
        z = np.zeros_like(av)
        z[sl] = g
        return z
    return _make(av[sl], (a, vjp))


def take_rows(a, idx):
    """Select rows along axis 0; gradient scatter-adds back."""
    av = value_of(a)
    idx = np.asarray(idx)
    def vjp(g):
        z = np.zeros_like(av)
        np.add.at(z, idx, g)
        return z
    return _make(av[idx], (a, vjp))


def gather_last(a, idx):
    """Pick one entry per row along the last axis; ``idx`` has shape a.shape[:-1]."""
    av = value_of(a)
    idx = np.asarray(idx)
    out = np.take_along_axis(av, idx[..., None], axis=-1)[..., 0]
    def vjp(g):
        z = np.zeros_like(av)
        np.put_along_axis(z, idx[..., None], g[..., None], axis=-1)
        return z
    return _make(out, (a, vjp))


# ---------------------------------------------------------------------------
# backward pass

def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every reachable node.

    ``root`` must hold a single scalar.  Grads add up across calls; use
    :func:`reset_grads` between passes on the same graph.
    """
    if not isinstance(root, Node):
        raise TypeError("backward: root must be a Node")
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.value.shape}")
    order = _toposort(root)
    if root.grad is None:
        root.grad = np.ones_like(root.value)
    else:
        root.grad = root.grad + np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._vjp(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g


def reset_grads(root: Node) -> None:
    """Zero every gradient reachable from ``root``."""
    for node in _toposort(root):
        node.grad = None


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f: Callable[[Mapping[str, object]], object],
               params: Mapping[str, Array],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a name->value mapping to a scalar; it is called once with
    Node-wrapped parameters (analytic side) and twice per coordinate with
    plain perturbed arrays.  Error is |analytic - fd| / max(1, |fd|),
    maximized over every coordinate of every parameter.
    """
    if eps <= 0.0:
        raise ValueError("grad_check: eps must be positive")
    leaves = {k: Node(v) for k, v in params.items()}
    out = f(leaves)
    if not isinstance(out, Node) or out.value.size != 1:
        raise ShapeError("grad_check: f must return a scalar Node")
    backward(out)

    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    max_err = 0.0
    for name in params:
        arr = work[name]
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = float(value_of(f(work)))
            arr[idx] = orig - eps
            fm = float(value_of(f(work)))
            arr[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"non-finite evaluation perturbing {name}[{idx}]")
            fd = (fp - fm) / (2.0 * eps)
            err = abs(float(analytic[idx]) - fd) / max(1.0, abs(fd))
            if err > max_err:
                max_err = err
    return max_err
