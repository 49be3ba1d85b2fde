"""Dense-tensor reverse-mode automatic differentiation.

A :class:`Tensor` wraps a float64 numpy array; forward ops record an
implicit tape (parent links plus a local backward closure), and
:func:`backward` walks it in reverse topological order exactly once.
The op set is exactly what the encoders, fusion, and proxy heads need.

All math is float64, single-threaded per graph, and deterministic.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Union

import numpy as np

CHECK_FINITE = True

_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class Tensor:
    """A float64 array with an optional gradient buffer.

    Tensors created by ops hold parent links; leaf tensors with
    ``requires_grad`` receive gradients from :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward_fn: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def in_graph(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; heavy lifting lives in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __getitem__(self, idx):
        return slice_(self, idx)


class Parameter(Tensor):
    """A leaf tensor that always requires gradients."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.isfinite(arr).all():
        raise ArithmeticError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    parents = tuple(p for p in parents if p.in_graph)
    if not parents:
        return Tensor(data)
    return Tensor(data, _parents=parents, _backward_fn=backward_fn)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.in_graph:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Forward ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd, "mul")


def scalar_mul(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = a.data * s

    def bwd(g):
        _accum(a, g * s)

    return _make(out, (a,), bwd, "scalar_mul")


def matmul(a, b) -> Tensor:
    """Matrix product, broadcasting over leading batch dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: {a.shape} vs {b.shape}") from None

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        _accum(a, _unbroadcast(ga, a.data.shape))
        if b.data.ndim == 2 and a.data.ndim > 2:
            # shared weight across batch: one flat gemm instead of a stack
            # of per-sample outer products summed afterwards
            k = a.data.shape[-1]
            n = g.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        _accum(b, gb)

    return _make(out, (a, b), bwd, "matmul")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: {[t.shape for t in ts]}") from None
    sizes = [t.data.shape[axis] for t in ts]

    def bwd(g):
        start = 0
        for t, size in zip(ts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + size)
            _accum(t, g[tuple(idx)])
            start += size

    return _make(out, ts, bwd, "concat")


def slice_(a, idx) -> Tensor:
    a = _as_tensor(a)
    out = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return _make(np.array(out), (a,), bwd, "slice")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out, (a,), bwd, "reshape")


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, np.transpose(g, inv))

    return _make(out, (a,), bwd, "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeMismatch(f"broadcast_to: {a.shape} -> {tuple(shape)}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return _make(out, (a,), bwd, "broadcast_to")


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(out, (a,), bwd, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return scalar_mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def layernorm(x, scale, shift, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    if scale.shape != x.shape[-1:] or shift.shape != x.shape[-1:]:
        raise ShapeMismatch(
            f"layernorm: scale/shift {scale.shape}/{shift.shape} vs last axis of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * scale.data + shift.data

    def bwd(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(shift, g.sum(axis=reduce_axes))
        _accum(scale, (g * xhat).sum(axis=reduce_axes))
        dxhat = g * scale.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, (dxhat - m1 - xhat * m2) * inv_std)

    return _make(out, (x, scale, shift), bwd, "layernorm")


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))

    return _make(out, (x,), bwd, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bwd(g):
        _accum(x, g - probs * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), bwd, "log_softmax")


def gelu(x) -> Tensor:
    """GELU with the tanh approximation (smooth, finite-difference friendly)."""
    x = _as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bwd(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        grad = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner
        _accum(x, g * grad)

    return _make(out, (x,), bwd, "gelu")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        _accum(x, g * (x.data > 0.0))

    return _make(out, (x,), bwd, "relu")


def log(x) -> Tensor:
    x = _as_tensor(x)
    out = np.log(x.data)

    def bwd(g):
        _accum(x, g / x.data)

    return _make(out, (x,), bwd, "log")


def embedding_lookup(table, indices) -> Tensor:
    """Gather rows of ``table`` by integer index."""
    table = _as_tensor(table)
    indices = np.asarray(indices, dtype=np.intp)
    out = table.data[indices]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, indices, g)
        _accum(table, gt)

    return _make(out, (table,), bwd, "embedding_lookup")


def masked_fill(x, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``; grads stop there."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.data.shape:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} vs {x.shape}")
    out = np.where(mask, float(value), x.data)

    def bwd(g):
        _accum(x, np.where(mask, 0.0, g))

    return _make(out, (x,), bwd, "masked_fill")


# ---------------------------------------------------------------------------
# Backward pass and verification


def backward(loss: Tensor) -> None:
    """Populate gradients of every tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise NotScalar(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    x.zero_grad()
    loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(x).data)
        flat[i] = orig - h
        lo = float(f(x).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(numeric - analytic) / denom)) if flat.size else 0.0


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
