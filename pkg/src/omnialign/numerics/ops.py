"""Differentiable kernels.

All ops accept arbitrary leading (batch) axes unless noted. Broadcasting is
limited to a right operand whose shape is a suffix of the left operand's
shape, which covers bias and positional-table addition.
"""

from __future__ import annotations

import builtins
import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor

_GELU_C = math.sqrt(2.0 / math.pi)


def _is_suffix(small: tuple[int, ...], big: tuple[int, ...]) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead else g


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    if a.shape == b.shape or _is_suffix(b.shape, a.shape):
        return a.shape
    if _is_suffix(a.shape, b.shape):
        return b.shape
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not trailing-axis compatible")


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            return Tensor._make(a.data + b, (a,), lambda g: (g,), "add")
        b = Tensor(b, dtype=a.dtype)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return add(a, -np.asarray(b))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            s = b
            return Tensor._make(a.data * s, (a,), lambda g: (g * s,), "mul")
        b = Tensor(b, dtype=a.dtype)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _reduce_to(g * bd, ad.shape) if a.requires_grad else None
        gb = _reduce_to(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return Tensor._make(out, (x,), backward, "gelu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._make(np.log(xd), (x,), lambda g: (g / xd,), "log")


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., M, K] @ b[K, N]`` or batched ``a[..., M, K] @ b[..., K, N]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ between {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[..., K] @ weight[K, N] + bias[N]``."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ wd.T if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return Tensor._make(out, parents, backward, "linear")


# -- shape ops ---------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from exc
    return Tensor._make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._make(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def _has_array_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    out = np.ascontiguousarray(x.data[idx])
    shape, dtype = x.shape, x.dtype
    fancy = _has_array_index(idx)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return Tensor._make(out, (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return Tensor._make(out, tensors, backward, "stack")


def expand_leading(x: Tensor, leading: tuple[int, ...]) -> Tensor:
    """Broadcast ``x`` to ``leading + x.shape``."""
    if not leading:
        return x
    out = np.ascontiguousarray(np.broadcast_to(x.data, tuple(leading) + x.shape))
    shape = x.shape
    return Tensor._make(out, (x,), lambda g: (g.reshape((-1,) + shape).sum(axis=0),), "expand")


# -- reductions --------------------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def max(x: Tensor, axis: int = -1) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    xd = x.data
    arg = np.argmax(xd, axis=axis)
    out = np.take_along_axis(xd, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(xd)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor._make(out, (x,), backward, "max")


# -- normalisation / probabilities ------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    d = xd.shape[-1]

    def backward(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                         - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, d)
        ggamma = (g2 * xhat.reshape(-1, d)).sum(axis=0) if gamma.requires_grad else None
        gbeta = g2.sum(axis=0) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward, "layer_norm")


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean next-token cross-entropy over positions where ``mask`` is true.

    ``logits`` is ``[..., V]``; ``targets`` and ``mask`` have the leading shape.
    """
    ld = logits.data
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != ld.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs logits {ld.shape}")
    m = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise ValueError("cross_entropy: mask selects no positions")
    shifted = ld - ld.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=-1, keepdims=True)
    logp = shifted - np.log(z)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * m).sum() / count
    out = np.asarray(loss, dtype=ld.dtype)

    def backward(g):
        p = e / z
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], axis=-1) - 1.0, axis=-1)
        scale = (m / count).astype(ld.dtype)[..., None]
        return (p * scale * g,)

    return Tensor._make(out, (logits,), backward, "cross_entropy")


# -- attention ---------------------------------------------------------------


def multi_head_attention(qkv: Tensor, n_heads: int, causal: bool = False) -> Tensor:
    """Scaled dot-product attention on a packed ``[..., L, 3D]`` projection.

    Returns ``[..., L, D]`` with heads concatenated along the last axis.
    """
    *lead, L, three_d = qkv.shape
    if three_d % 3:
        raise ShapeError(f"attention: packed width {three_d} is not divisible by 3")
    d = three_d // 3
    if d % n_heads:
        raise ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    packed = qkv.data.reshape(-1, L, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = packed[0], packed[1], packed[2]
    scale = 1.0 / math.sqrt(dh)
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    if causal:
        future = np.triu(np.ones((L, L), dtype=bool), k=1)
        scores = np.where(future, np.asarray(-1e30, dtype=scores.dtype), scores)
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    ctx = p @ v
    out = ctx.transpose(0, 2, 1, 3).reshape(*lead, L, d)

    def backward(g):
        go = g.reshape(-1, L, n_heads, dh).transpose(0, 2, 1, 3)
        gv = np.swapaxes(p, -1, -2) @ go
        gp = go @ np.swapaxes(v, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k
        gk = np.swapaxes(gs, -1, -2) @ q
        gpacked = np.stack([gq, gk, gv], axis=0).transpose(1, 3, 0, 2, 4)
        return (gpacked.reshape(qkv.shape),)

    return Tensor._make(np.ascontiguousarray(out), (qkv,), backward, "attention")


# -- convolutions ------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=(1, 1)) -> Tensor:
    """Valid (unpadded) 2-D convolution.

    ``x`` is ``[..., C_in, H, W]``, ``weight`` is ``[C_out, C_in, Kh, Kw]``;
    the result is ``[..., C_out, H', W']``.
    """
    x = as_tensor(x)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    c_out, c_in, kh, kw = weight.shape
    *lead, c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input channels {c} do not match weight {weight.shape}")
    if h < kh or w < kw:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} larger than input {(h, w)}")
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    win = sliding_window_view(x.data, (kh, kw), axis=(-2, -1))[..., ::sh, ::sw, :, :]
    nlead = len(lead)
    # [..., C, Ho, Wo, kh, kw] -> [..., Ho, Wo, C, kh, kw]
    cols = np.moveaxis(win, nlead, nlead + 2).reshape(*lead, ho * wo, c_in * kh * kw)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(np.moveaxis(out, -1, -2)).reshape(*lead, c_out, ho, wo)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = np.moveaxis(g.reshape(*lead, c_out, ho * wo), -1, -2)  # [..., Ho*Wo, C_out]
        g2f = g2.reshape(-1, c_out)
        gw = (g2f.T @ cols.reshape(-1, c_in * kh * kw)).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(*lead, ho, wo, c_in, kh, kw)
            gcols = np.moveaxis(gcols, (nlead, nlead + 1), (nlead + 1, nlead + 2))  # [..., C, Ho, Wo, kh, kw]
            gx = np.zeros(x.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx[..., i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += gcols[..., i, j]
        if bias is None:
            return gx, gw
        gb = g2f.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return Tensor._make(out, parents, backward, "conv2d")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 1-D convolution: ``[..., C_in, L]`` -> ``[..., C_out, L']``."""
    x = as_tensor(x)
    c_out, c_in, k = weight.shape
    *lead, c, length = x.shape
    if c != c_in:
        raise ShapeError(f"conv1d: input channels {c} do not match weight {weight.shape}")
    if length < k:
        raise ShapeError(f"conv1d: kernel {k} larger than input length {length}")
    lo = (length - k) // stride + 1
    win = sliding_window_view(x.data, k, axis=-1)[..., ::stride, :]  # [..., C, Lo, k]
    nlead = len(lead)
    cols = np.moveaxis(win, nlead, nlead + 1).reshape(*lead, lo, c_in * k)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(np.moveaxis(out, -1, -2))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = np.moveaxis(g, -1, -2)  # [..., Lo, C_out]
        g2f = g2.reshape(-1, c_out)
        gw = (g2f.T @ cols.reshape(-1, c_in * k)).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.moveaxis((g2 @ wmat).reshape(*lead, lo, c_in, k), nlead, nlead + 1)
            gx = np.zeros(x.shape, dtype=x.dtype)
            for i in range(k):
                gx[..., i:i + stride * (lo - 1) + 1:stride] += gcols[..., i]
        if bias is None:
            return gx, gw
        gb = g2f.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return Tensor._make(out, parents, backward, "conv1d")


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


# -- lookups and mixing ------------------------------------------------------


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]
    shape = table.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return Tensor._make(out, (table,), backward, "embedding")


def weighted_sum(outputs: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Per-row mixture ``sum_k weights[..., k] * outputs[k]``.

    ``outputs`` are K tensors of shape ``[..., N, D]``; ``weights`` is
    ``[..., N, K]``. Terms are accumulated in expert order.
    """
    k = len(outputs)
    if weights.shape[-1] != k:
        raise ShapeError(f"weighted_sum: {k} outputs but weights shape {weights.shape}")
    for o in outputs:
        if o.shape != outputs[0].shape or o.shape[:-1] != weights.shape[:-1]:
            raise ShapeError(f"weighted_sum: output {o.shape} incompatible with weights {weights.shape}")
    wd = weights.data
    acc = wd[..., 0:1] * outputs[0].data
    for i in range(1, k):
        acc = acc + wd[..., i:i + 1] * outputs[i].data

    def backward(g):
        grads = [g * wd[..., i:i + 1] if outputs[i].requires_grad else None for i in range(k)]
        gw = None
        if weights.requires_grad:
            gw = np.stack([(g * outputs[i].data).sum(axis=-1) for i in range(k)], axis=-1)
        return (*grads, gw)

    return Tensor._make(acc, (*outputs, weights), backward, "weighted_sum")


def segment_mean(x: Tensor, counts: Sequence[int]) -> Tensor:
    """Mean over consecutive groups along axis 0 (``counts`` sizes)."""
    counts = list(counts)
    if not counts or any(c <= 0 for c in counts):
        raise ShapeError(f"segment_mean: invalid group sizes {counts}")
    if builtins.sum(counts) != x.shape[0]:
        raise ShapeError(f"segment_mean: sizes {counts} do not cover axis of length {x.shape[0]}")
    avg = np.zeros((len(counts), x.shape[0]), dtype=x.dtype)
    start = 0
    for i, c in enumerate(counts):
        avg[i, start:start + c] = 1.0 / c
        start += c
    flat = reshape(x, (x.shape[0], -1))
    return reshape(matmul(Tensor(avg), flat), (len(counts),) + x.shape[1:])

