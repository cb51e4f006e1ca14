"""
LDSeg - Layer Functions
Differentiable building blocks shared by every architecture: convolution,
normalization, spatial self-attention, sinusoidal time embedding, linear
projection and nearest-neighbour up-sampling.
"""

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import DimensionError, RangeError
from src.numerics.tensor import Tensor, as_tensor


# ============ Convolution ============

def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Optional[int] = None,
) -> Tensor:
    """
    2-D cross-correlation, input (N, Cin, H, W), weight (Cout, Cin, k, k).

    With the default padding k//2 the output has ceil(H/stride) rows and
    ceil(W/stride) columns; any other padding must preserve that contract.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square and odd, got {k}x{k2}")
    if bias is not None and as_tensor(bias).shape != (cout,):
        raise DimensionError(f"conv2d bias must have shape ({cout},)")
    pad = k // 2 if padding is None else padding
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho != -(-h // stride) or wo != -(-w // stride):
        raise DimensionError(f"padding {pad} does not give ceil(H/stride) output for {h}x{w}, stride {stride}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = parents + (bias,)
    out = np.ascontiguousarray(out)

    def backward(g):
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                grad_xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
        grad_x = grad_xp[:, :, pad:pad + h, pad:pad + w]
        grads = (grad_x, grad_w)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return Tensor._from_op(out, parents, backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Repeat every pixel factor x factor times (N, C, H, W) -> (N, C, fH, fW)."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._from_op(out, (x,), backward)


# ============ Normalization ============

def group_norm(
    x: Tensor,
    groups: int,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize each sample over channel groups; optional per-channel affine."""
    x = as_tensor(x)
    if x.ndim < 2 or x.size == 0:
        raise DimensionError(f"group_norm needs a non-empty (N, C, ...) input, got {x.shape}")
    n, c = x.shape[0], x.shape[1]
    if c % groups:
        raise DimensionError(f"{c} channels not divisible into {groups} groups")
    grouped = x.reshape(n, groups, -1)
    mean = grouped.mean(axis=2, keepdims=True)
    centered = grouped - mean
    var = (centered * centered).mean(axis=2, keepdims=True)
    normed = (centered * (var + eps) ** -0.5).reshape(x.shape)
    if gamma is not None:
        affine_shape = (1, c) + (1,) * (x.ndim - 2)
        normed = normed * gamma.reshape(affine_shape) + beta.reshape(affine_shape)
    return normed


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample normalization over all non-batch elements (no affine)."""
    return group_norm(x, 1, eps=eps)


# ============ Dense / Attention ============

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x (..., fin) @ weight(fout, fin)^T + bias."""
    out = as_tensor(x) @ weight.transpose()
    return out + bias if bias is not None else out


def attention2d(
    x: Tensor,
    wq: Tensor, bq: Tensor,
    wk: Tensor, bk: Tensor,
    wv: Tensor, bv: Tensor,
    wo: Tensor, bo: Tensor,
    heads: int = 4,
) -> Tensor:
    """
    Multi-head self-attention over the H*W spatial positions with residual add.

    Projections are (C, C) matrices applied per token.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"attention2d expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if c % heads:
        raise DimensionError(f"{c} channels not divisible by {heads} heads")
    d = c // heads
    length = h * w

    tokens = x.reshape(n, c, length).transpose(0, 2, 1)

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(n, length, heads, d).transpose(0, 2, 1, 3)

    q = split_heads(linear(tokens, wq, bq))
    k = split_heads(linear(tokens, wk, bk))
    v = split_heads(linear(tokens, wv, bv))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    attended = (scores.softmax(axis=-1) @ v).transpose(0, 2, 1, 3).reshape(n, length, c)
    projected = linear(attended, wo, bo)
    return x + projected.transpose(0, 2, 1).reshape(n, c, h, w)


# ============ Time Embedding ============

def time_embedding(t, dim: int, max_period: float = 10000.0) -> Tensor:
    """
    Sinusoidal embedding [sin(t*f_i), cos(t*f_i)], f_i = max_period^(-i/(dim/2)).

    `t` may be a scalar (-> shape (dim,)) or an array of timesteps (-> (..., dim)).
    """
    if dim % 2:
        raise DimensionError(f"time embedding dim must be even, got {dim}")
    steps = np.asarray(t, dtype=np.float64)
    if np.any(steps < 0):
        raise RangeError("timesteps must be non-negative")
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = steps[..., None] * freqs
    return Tensor(np.concatenate([np.sin(args), np.cos(args)], axis=-1))
