"""Sequence kernels: causal multi-head attention, rotary embedding, timestep features.

All kernels are pure functions of Tensors and work on shapes (..., T, C);
the documented base case is a single sequence (T, C).
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError
from . import tensor as tt
from .tensor import Tensor, as_tensor

MASK_FILL = -1e30  # exp(MASK_FILL - rowmax) underflows to exactly 0.0


def rope_angles(positions: np.ndarray, dim: int, base: float = 10000.0) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (len(positions), dim // 2)."""
    if dim % 2 != 0:
        raise ConfigError(f"rotary embedding needs an even dim, got {dim}")
    inv_freq = base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(ang), np.sin(ang)


def apply_rope(x, positions, base: float = 10000.0) -> Tensor:
    """Rotate feature pairs (2i, 2i+1) of each row by position-dependent angles.

    x: (..., T, C) with C even; positions: length-T index array. Rotations
    are isometries, and dot products of rotated query/key pairs depend only
    on the position difference.
    """
    x = as_tensor(x)
    T, C = x.shape[-2], x.shape[-1]
    positions = np.asarray(positions)
    if positions.shape != (T,):
        raise ConfigError(f"apply_rope: got {positions.shape[0] if positions.ndim else 0} positions for {T} rows")
    cos, sin = rope_angles(positions, C, base)
    cos = cos.astype(x.dtype, copy=False)
    sin = sin.astype(x.dtype, copy=False)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out_even = even * cos - odd * sin
    out_odd = even * sin + odd * cos
    half_shape = out_even.shape
    stacked = tt.concat(
        [tt.reshape(out_even, half_shape + (1,)), tt.reshape(out_odd, half_shape + (1,))],
        axis=-1,
    )
    return tt.reshape(stacked, x.shape)


def causal_attention(
    q,
    k,
    v,
    heads: int,
    *,
    positions_q: np.ndarray | None = None,
    positions_k: np.ndarray | None = None,
    rope_base: float = 10000.0,
    query_offset: int | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention with a lower-triangular mask.

    q: (..., Tq, C), k/v: (..., Tk, C). Query row i may attend key rows
    j <= query_offset + i; by default queries are the last Tq positions of
    the key sequence (query_offset = Tk - Tq), which reduces to plain causal
    self-attention when Tq == Tk. Masked weights are exactly zero, so
    future rows cannot influence the output even at the bit level.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    C = q.shape[-1]
    if C % heads != 0:
        raise ConfigError(f"attention dim {C} not divisible by {heads} heads")
    if k.shape[-2] != v.shape[-2] or k.shape[-1] != C or v.shape[-1] != C:
        raise ConfigError("attention: k and v must share length and match q's dim")
    tq, tk = q.shape[-2], k.shape[-2]
    offset = tk - tq if query_offset is None else query_offset

    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    if positions_q is not None:
        qh = apply_rope(qh, positions_q, rope_base)
    if positions_k is not None:
        kh = apply_rope(kh, positions_k, rope_base)

    hd = C // heads
    scores = tt.matmul(qh, tt.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(hd))
    future = np.arange(tk)[None, :] > (offset + np.arange(tq))[:, None]
    if future.any():
        scores = tt.masked_fill(scores, future, MASK_FILL)
    attn = tt.softmax(scores, axis=-1)
    return _merge_heads(tt.matmul(attn, vh))


def cross_attention(q, k, v, heads: int) -> Tensor:
    """Unmasked attention from sequence rows onto a conditioning set."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    C = q.shape[-1]
    if C % heads != 0:
        raise ConfigError(f"attention dim {C} not divisible by {heads} heads")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scores = tt.matmul(qh, tt.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(C // heads))
    return _merge_heads(tt.matmul(tt.softmax(scores, axis=-1), vh))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    T, C = x.shape[-2], x.shape[-1]
    y = tt.reshape(x, x.shape[:-1] + (heads, C // heads))
    return tt.swapaxes(y, -2, -3)  # (..., heads, T, hd)


def _merge_heads(x: Tensor) -> Tensor:
    y = tt.swapaxes(x, -2, -3)  # (..., T, heads, hd)
    return tt.reshape(y, y.shape[:-2] + (y.shape[-2] * y.shape[-1],))


def linear(x, w, b=None) -> Tensor:
    out = tt.matmul(as_tensor(x), as_tensor(w))
    return out if b is None else out + as_tensor(b)


def sinusoidal_embedding(values: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of scalar values (timesteps); constant, no gradient."""
    values = np.asarray(values, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = values[..., None] * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros_like(emb[..., :1])], axis=-1)
    return emb
