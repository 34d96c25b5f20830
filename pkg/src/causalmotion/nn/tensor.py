"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray and remembers, per op, a list of
(parent, vector-Jacobian-product) pairs. `backward` walks the graph in
reverse topological order and accumulates gradients into `.grad`. Ops only
record vjps when some input requires a gradient, so inference paths pay
almost nothing for running through the same code.

All ops are deterministic and preserve the dtype of their inputs.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_vjps")

    def __init__(self, data, requires_grad: bool = False, _vjps=()):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or bool(_vjps)
        self.grad = None
        self._vjps = _vjps  # tuple of (Tensor, callable(g) -> grad contribution)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into `.grad` of every reachable tensor.

        Grads of the reachable subgraph are reset first, so calling backward
        from two different roots of a shared graph keeps the results
        separate.
        """
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data) if seed is None else np.asarray(seed)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._vjps:
                contrib = vjp(g)
                # grads are never mutated in place, so aliasing views is safe
                parent.grad = contrib if parent.grad is None else parent.grad + contrib


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjps:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (reverses numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(data, vjps) -> Tensor:
    vjps = tuple((p, f) for p, f in vjps if p.requires_grad)
    return Tensor(data, _vjps=vjps)


# -- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.data.shape)), (b, lambda g: _unbroadcast(g, b.data.shape))],
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        [(a, lambda g: _unbroadcast(g, a.data.shape)), (b, lambda g: _unbroadcast(-g, b.data.shape))],
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data / b.data,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ],
    )


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**p
    return _make(out, [(a, lambda g: g * p * a.data ** (p - 1))])


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)])


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), [(a, lambda g: g / a.data)])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, [(a, lambda g: g * (0.5 / out))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return _make(np.where(keep, a.data, 0.0), [(a, lambda g: g * keep)])


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _make(a.data * sig, [(a, lambda g: g * sig * (1.0 + a.data * (1.0 - sig)))])


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp; gradient is zero outside [lo, hi]."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), [(a, lambda g: g * inside)])


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), [(a, lambda g: g * sign)])


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    return _make(
        np.where(take_a, a.data, b.data),
        [
            (a, lambda g: _unbroadcast(g * take_a, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~take_a, b.data.shape)),
        ],
    )


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ConfigError("matmul expects operands with at least 2 dimensions")

    if b.ndim == 2 and a.ndim > 2:
        # dense-layer case: flatten leading dims into one gemm and keep the
        # weight gradient a single (C, D) product instead of a batched stack
        lead = a.data.shape[:-1]
        a2 = a.data.reshape(-1, a.data.shape[-1])
        out = (a2 @ b.data).reshape(lead + (b.data.shape[-1],))

        def da2(g):
            return (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.data.shape)

        def db2(g):
            return a2.T @ g.reshape(-1, g.shape[-1])

        return _make(out, [(a, da2), (b, db2)])

    def da(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)

    def db(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)

    return _make(a.data @ b.data, [(a, da), (b, db)])


# -- reductions ------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def da(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.data.shape)

    return _make(out, [(a, da)])


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- shape manipulation ----------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    return _make(a.data.reshape(shape), [(a, lambda g: g.reshape(old))])


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([p.data for p in parts], axis=axis)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _make(out, [(p, make_vjp(i)) for i, p in enumerate(parts)])


def getitem(a, idx) -> Tensor:
    """Basic slicing only (no integer-array indexing; see take_rows)."""
    a = as_tensor(a)
    out = a.data[idx]

    def da(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return full

    return _make(out, [(a, da)])


def take_rows(table, ids: np.ndarray) -> Tensor:
    """Row gather (embedding lookup). Gradient scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def da(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return full

    return _make(table.data[ids], [(table, da)])


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where `mask` is True by `value`; no gradient flows there."""
    a = as_tensor(a)
    keep = ~mask
    return _make(np.where(mask, value, a.data), [(a, lambda g: g * keep)])


def upsample_repeat(a, factor: int) -> Tensor:
    """Repeat each time step `factor` times along axis -2."""
    a = as_tensor(a)
    out = np.repeat(a.data, factor, axis=-2)

    def da(g):
        shp = g.shape[:-2] + (a.data.shape[-2], factor, g.shape[-1])
        return g.reshape(shp).sum(axis=-2)

    return _make(out, [(a, da)])


# -- fused ops -------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def da(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return _make(y, [(a, da)])


def layernorm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def da(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return inv * (g - gm - y * gym)

    return _make(y, [(a, da)])


def conv1d_causal(x, w, b=None, stride: int = 1) -> Tensor:
    """Causal 1-D convolution with left zero padding.

    x: (..., T, Cin), w: (k, Cin, Cout), b: (Cout,). Output step j covers
    input positions [stride*j - (k-1), stride*j], so no future input is ever
    touched. T must be divisible by stride.
    """
    x, w = as_tensor(x), as_tensor(w)
    k, cin, cout = w.data.shape
    T = x.data.shape[-2]
    if x.data.shape[-1] != cin:
        raise ConfigError(f"conv1d_causal: input has {x.data.shape[-1]} channels, weight expects {cin}")
    if T % stride != 0:
        raise ConfigError(f"conv1d_causal: length {T} not divisible by stride {stride}")
    to = T // stride

    pad_width = [(0, 0)] * (x.ndim - 2) + [(k - 1, 0), (0, 0)]
    padded = np.pad(x.data, pad_width)
    # cols[..., j, i*cin:(i+1)*cin] = padded[..., i + stride*j, :]
    cols = np.concatenate(
        [padded[..., i : i + stride * to : stride, :] for i in range(k)], axis=-1
    )
    w2 = w.data.reshape(k * cin, cout)
    out = cols @ w2

    def dx(g):
        gcols = g @ w2.T  # (..., to, k*cin)
        gpad = np.zeros_like(padded)
        for i in range(k):
            gpad[..., i : i + stride * to : stride, :] += gcols[..., i * cin : (i + 1) * cin]
        return gpad[..., k - 1 :, :]

    def dw(g):
        flat_cols = cols.reshape(-1, k * cin)
        flat_g = g.reshape(-1, cout)
        return (flat_cols.T @ flat_g).reshape(k, cin, cout)

    vjps = [(x, dx), (w, dw)]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        vjps.append((b, lambda g: _unbroadcast(g, b.data.shape)))
    return _make(out, vjps)
