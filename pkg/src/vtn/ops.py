"""Differentiable operations used by the model.

Broadcasting is deliberately narrow: a second operand may be a scalar or have
a shape that is a suffix of the first operand's shape (bias-style). Anything
else is a shape error.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from . import kernels
from .tensor import Tensor, as_tensor, make_result

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_binary(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise ValueError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a)
    _check_binary(a, b, "mul")
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)

    return make_result(ad * bd, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared across ``a``'s leading axes) or carries the
    same leading axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ValueError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    shared = b.ndim == 2

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_result(ad @ bd, (a, b), backward, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(src),)

    return make_result(data, (x,), backward, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return make_result(data, (x,), backward, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            out.append(g[tuple(index)])
        return tuple(out)

    return make_result(data, tensors, backward, "concat")


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""
    src_shape, dtype = x.shape, x.dtype
    data = np.array(x.data[index], copy=True)

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[index] = g
        return (full,)

    return make_result(data, (x,), backward, "getitem")


def sum(x: Tensor, axis=None) -> Tensor:
    src = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    src = x.shape
    count = x.size if axis is None else int(np.prod([src[a] for a in np.atleast_1d(axis)]))

    def backward(g):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, src).astype(x.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).astype(x.dtype),)

    return make_result(np.asarray(x.data.mean(axis=axis)), (x,), backward, "mean")


def abs(x: Tensor) -> Tensor:
    xd = x.data

    def backward(g):
        return (g * np.sign(xd),)

    return make_result(np.abs(xd), (x,), backward, "abs")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward, "softmax")


def masked_softmax(x: Tensor, valid: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``valid`` entries.

    Masked entries come out as exact zeros. Every row needs one valid entry.
    """
    valid = np.broadcast_to(valid, x.shape)
    scores = np.where(valid, x.data, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(scores), 0.0).astype(x.dtype)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (x,), backward, "masked_softmax")


def layer_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine."""
    if x.shape[-1] < 1:
        raise ValueError("layer_norm over an empty axis")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = None if gamma is None else gamma.data
    out = xhat if gd is None else xhat * gd
    if beta is not None:
        out = out + beta.data
    n = xd.shape[-1]
    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def backward(g):
        gx_hat = g if gd is None else g * gd
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        grads = [gx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return make_result(out.astype(xd.dtype, copy=False), parents, backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_result((xd * cdf).astype(xd.dtype, copy=False), (x,), backward, "gelu")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return make_result(x.data * keep, (x,), backward, "dropout")


def embedding(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    rows = table.shape[0]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexError(f"embedding index out of range for table with {rows} rows")
    return make_result(table.data[idx], (table,), backward, "embedding")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (B x C) against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    b = logits.shape[0]
    loss = -logp[np.arange(b), labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(b), labels] -= 1.0
        return ((grad * (g / b)).astype(logits.dtype),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def im2col(x: Tensor, kernel: int, stride: int, pad: int) -> Tensor:
    """Channels-last patch extraction: (N, H, W, C) -> (N, H'*W', k*k*C)."""
    if x.ndim != 4:
        raise ValueError(f"im2col expects (N, H, W, C), got {x.shape}")
    n, h, w, c = x.shape
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("im2col: kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kernel, kernel, c), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]

    def backward(g):
        g = g.reshape(n, ho, wo, kernel, kernel, c)
        gp = np.zeros_like(xp)
        for i in range(kernel):
            for j in range(kernel):
                gp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += g[:, :, :, i, j, :]
        return (gp[:, pad:pad + h, pad:pad + w, :],)

    return make_result(cols.reshape(n, ho * wo, kernel * kernel * c), (x,), backward, "im2col")


def band_scores(q: Tensor, k: Tensor, index: np.ndarray) -> Tensor:
    """Scores of query rows against the key slots listed in ``index``.

    q: (G, n, D); k: (G, N, D); index: (n, A) key ids, -1 for empty slots.
    Returns (G, n, A) dot products, zero on empty slots.
    """
    qd, kd = q.data, k.data
    scores = kernels.band_qk(qd, kd, index)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=qd.dtype)
        dq, dk = kernels.band_qk_backward(g, qd, kd, index)
        return dq, dk

    return make_result(scores, (q, k), backward, "band_scores")


def band_mix(p: Tensor, v: Tensor, index: np.ndarray) -> Tensor:
    """Weighted sum of value rows over banded slots: (G, n, A) x (G, N, D) -> (G, n, D)."""
    pd, vd = p.data, v.data
    out = kernels.band_pv(pd, vd, index)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=vd.dtype)
        dp, dv = kernels.band_pv_backward(g, pd, vd, index)
        return dp, dv

    return make_result(out, (p, v), backward, "band_mix")
