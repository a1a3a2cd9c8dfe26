"""The closed set of differentiable primitives.

Each function computes its forward value with numpy and registers a backward
rule. Broadcasting follows numpy; gradients are summed back to the input
shape. Shape errors name both offending shapes.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- arithmetic ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    av, bv = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return make_result(av * bv, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batching rules (``b`` may be a shared 2-D weight)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return make_result(av @ bv, (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "maximum")
    pick_a = a.data >= b.data

    def bw(g):
        return (_unbroadcast(np.where(pick_a, g, 0), a.shape),
                _unbroadcast(np.where(pick_a, 0, g), b.shape))

    return make_result(np.maximum(a.data, b.data), (a, b), bw)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        val = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return make_result(val, (x,), lambda g: (g.reshape(old),))


# -- nonlinearities -----------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    neg = x.data < 0
    out = np.where(neg, slope * x.data, x.data)
    return make_result(out, (x,), lambda g: (np.where(neg, slope * g, g),))


def softmax(x, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    x = as_tensor(x)
    v = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        v = np.where(mask, v, -np.inf)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), bw)


def log_softmax(x) -> np.ndarray:
    v = np.asarray(x)
    m = v.max(axis=-1, keepdims=True)
    return v - m - np.log(np.exp(v - m).sum(axis=-1, keepdims=True))


def log_softmax_nll(logits, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """Summed negative log likelihood of integer ``targets`` under softmax(logits).

    ``logits`` has shape (..., V) and ``targets`` the leading shape. ``weights``
    (same shape as ``targets``) scales each position's term; use 0 for padding.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"log_softmax_nll: logits {logits.shape} vs targets {targets.shape}")
    flat = logits.data.reshape(-1, logits.shape[-1])
    t = targets.reshape(-1)
    w = np.ones(t.shape, dtype=flat.dtype) if weights is None else np.asarray(weights, dtype=flat.dtype).reshape(-1)
    lsm = log_softmax(flat)
    nll = -(lsm[np.arange(t.size), t] * w).sum()
    shape = logits.shape

    def bw(g):
        p = np.exp(lsm)
        p[np.arange(t.size), t] -= 1.0
        return ((p * (w[:, None] * g)).reshape(shape),)

    return make_result(np.asarray(nll, dtype=flat.dtype), (logits,), bw)


# -- structure ----------------------------------------------------------------

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        val = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + " and ".join(str(t.shape) for t in ts)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(val, tuple(ts), bw)


def getitem(x, index) -> Tensor:
    """Basic slicing (ints, slices, ellipsis)."""
    x = as_tensor(x)
    shape, dtype = x.shape, x.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return make_result(x.data[index], (x,), bw)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup: ``table[ids]`` with scatter-add gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table {table.shape}")
    shape, dtype = table.shape, table.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return make_result(table.data[ids], (table,), bw)


def temporal_max_pool(x, width: int, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max over non-overlapping windows of ``width`` along axis 1 of (B, T, H).

    Output has ceil(T / width) windows. Masked-out positions (mask False,
    shape (B, T)) never win; a window with no valid position outputs 0.
    Ties go to the lowest index.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"temporal_max_pool: expected (B, T, H), got {x.shape}")
    if width < 1:
        raise ValueError("pooling width must be >= 1")
    B, T, H = x.shape
    n = -(-T // width)
    pad = n * width - T
    v = x.data
    valid = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if pad:
        v = np.concatenate([v, np.zeros((B, pad, H), dtype=v.dtype)], axis=1)
        valid = np.concatenate([valid, np.zeros((B, pad), dtype=bool)], axis=1)
    vw = np.where(valid[:, :, None], v, -np.inf).reshape(B, n, width, H)
    arg = vw.argmax(axis=2)  # (B, n, H); first max wins
    out = np.take_along_axis(vw, arg[:, :, None, :], axis=2)[:, :, 0, :]
    any_valid = valid.reshape(B, n, width).any(axis=2)
    out = np.where(any_valid[:, :, None], out, 0.0).astype(x.data.dtype)
    src = arg + (np.arange(n) * width)[None, :, None]  # source time index

    def bw(g):
        g = np.where(any_valid[:, :, None], g, 0.0)
        full = np.zeros((B, n * width, H), dtype=g.dtype)
        bi = np.arange(B)[:, None, None]
        hi = np.arange(H)[None, None, :]
        full[bi, src, hi] = g
        return (full[:, :T],)

    return make_result(out, (x,), bw)


def grad_reverse(x, scale: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by ``-scale``."""
    x = as_tensor(x)
    return make_result(x.data.copy(), (x,), lambda g: (-scale * g,))


def stop_gradient(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.data.copy(), dtype=x.data.dtype)
