"""Causal diffusion transformer with per-frame noise-level conditioning.

Each block runs causal self-attention (rotary positions), cross-attention
onto caption token embeddings, and an MLP. Self-attention and MLP are
wrapped in adaptive layer norm driven by the frame's own noise level, with
zero-initialized gates so every block starts as the identity; the
cross-attention residual uses a plain pre-norm with a zero-initialized
output projection for the same reason.

The windowed forward is the single code path for full-sequence evaluation,
incremental decoding, and frame-wise sampling: frozen prefix frames
contribute cached key/value projections, active frames are recomputed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import ParamTree, ops
from .nn.kernels import causal_attention, cross_attention, linear, sinusoidal_embedding
from .nn.tensor import Tensor, as_tensor
from .rng import RngKey
from .types import TextCondition

CAPTION_TOKENS = 2  # every condition, including the null one, is two tokens


@dataclass
class DiTConfig:
    layers: int = 4
    heads: int = 4
    hidden: int = 128
    latent_dim: int = 16
    vocab_size: int = 16
    mlp_ratio: int = 4
    rope_base: float = 10000.0
    max_level: int = 1000  # highest admissible noise level (training K)

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")

    @classmethod
    def paper_scale(cls, latent_dim: int = 64, **kw) -> "DiTConfig":
        return cls(layers=8, heads=4, hidden=512, latent_dim=latent_dim, **kw)


def null_token_id(vocab_size: int) -> int:
    return vocab_size - 1


def make_null_condition(vocab_size: int) -> TextCondition:
    """The reserved unconditional caption used for guidance and drop."""
    nid = null_token_id(vocab_size)
    return TextCondition(tokens=(nid,) * CAPTION_TOKENS, null_flag=True)


def drop_condition(cond: TextCondition, p: float, rng: RngKey, vocab_size: int, step: int = 0) -> TextCondition:
    """Replace the caption by the null condition with probability p."""
    if p > 0 and rng.uniform("drop", step=step) < p:
        return make_null_condition(vocab_size)
    return cond


def init_dit_params(cfg: DiTConfig, gen: np.random.Generator) -> ParamTree:
    tree = ParamTree()
    H = cfg.hidden

    def dense(name, cin, cout, std=0.02, zero=False):
        tree[f"{name}.w"] = np.zeros((cin, cout)) if zero else gen.normal(0.0, std, size=(cin, cout))
        tree[f"{name}.b"] = np.zeros(cout)

    dense("inp", cfg.latent_dim, H)
    dense("temb.fc1", H, H)
    dense("temb.fc2", H, H)
    tree["tok.table"] = gen.normal(0.0, 0.02, size=(cfg.vocab_size, H))
    for i in range(cfg.layers):
        dense(f"l{i}.mod", H, 6 * H, zero=True)
        for proj in ("wq", "wk", "wv"):
            dense(f"l{i}.sa.{proj}", H, H)
        dense(f"l{i}.sa.wo", H, H)
        for proj in ("wq", "wk", "wv"):
            dense(f"l{i}.ca.{proj}", H, H)
        dense(f"l{i}.ca.wo", H, H, zero=True)
        dense(f"l{i}.mlp.fc1", H, cfg.mlp_ratio * H)
        dense(f"l{i}.mlp.fc2", cfg.mlp_ratio * H, H)
    dense("final.mod", H, 2 * H, zero=True)
    dense("final.out", H, cfg.latent_dim, zero=True)
    return tree


def _lin(lv, name, x) -> Tensor:
    return linear(x, lv[f"{name}.w"], lv[f"{name}.b"])


def level_embedding(lv, cfg: DiTConfig, k: np.ndarray) -> Tensor:
    """Noise levels -> conditioning vectors, shape (..., U, hidden)."""
    k = np.asarray(k)
    if k.size and (k.min() < 0 or k.max() > cfg.max_level):
        raise ConfigError(f"noise level out of range [0, {cfg.max_level}]: {int(k.min())}..{int(k.max())}")
    sem = sinusoidal_embedding(k, cfg.hidden).astype(lv["temb.fc1.w"].data.dtype)
    return _lin(lv, "temb.fc2", ops.silu(_lin(lv, "temb.fc1", Tensor(sem))))


def modulation(lv, layer: int, cond: Tensor) -> list[Tensor]:
    """Six per-frame vectors: shift/scale/gate for self-attention and MLP."""
    mod = _lin(lv, f"l{layer}.mod", ops.silu(cond))
    H = mod.shape[-1] // 6
    return [mod[..., i * H : (i + 1) * H] for i in range(6)]


def timestep_adaln(h, k, lv, cfg: DiTConfig, layer: int = 0, which: str = "mlp", inner=None) -> Tensor:
    """Apply one adaptive-layer-norm block: residual + gate * inner(modulated norm).

    `which` selects the self-attention or MLP modulation triple of `layer`;
    `inner` defaults to that layer's MLP. Fresh zero-initialized gates make
    this an exact identity.
    """
    h = as_tensor(h)
    cond = level_embedding(lv, cfg, k)
    mods = modulation(lv, layer, cond)
    shift, scale, gate = mods[0:3] if which == "sa" else mods[3:6]
    if inner is None:
        inner = lambda x: _lin(lv, f"l{layer}.mlp.fc2", ops.silu(_lin(lv, f"l{layer}.mlp.fc1", x)))
    x = ops.layernorm(h) * (1.0 + scale) + shift
    return h + gate * inner(x)


# -- conditions -------------------------------------------------------------


def normalize_condition(cond, num_frames: int) -> list[tuple[TextCondition, int, int]]:
    """Normalize a condition into [(caption, start, end)] latent segments.

    Accepts a single TextCondition or a caption track: a list of
    (TextCondition, start_latent_frame) pairs with increasing starts, the
    first at 0.
    """
    if isinstance(cond, TextCondition):
        return [(cond, 0, num_frames)]
    track = list(cond)
    if not track or track[0][1] != 0:
        raise ConfigError("caption track must start at latent frame 0")
    segs = []
    for i, (cap, start) in enumerate(track):
        end = track[i + 1][1] if i + 1 < len(track) else num_frames
        if not 0 <= start < end <= num_frames:
            raise ConfigError(f"bad caption segment boundaries: start={start}, end={end}")
        segs.append((cap, int(start), int(end)))
    return segs


def condition_at(cond, frame: int, num_frames: int) -> TextCondition:
    for cap, start, end in normalize_condition(cond, num_frames):
        if start <= frame < end:
            return cap
    raise ConfigError(f"latent frame {frame} not covered by caption track")


def token_embeddings(lv, cond: TextCondition) -> Tensor:
    return ops.take_rows(lv["tok.table"], np.asarray(cond.tokens, dtype=np.int64))


# -- forward ----------------------------------------------------------------


class DiTCache:
    """Per-layer key/value projections of frozen frames (pre-rotation)."""

    def __init__(self, cfg: DiTConfig):
        self.k = [np.zeros((0, cfg.hidden)) for _ in range(cfg.layers)]
        self.v = [np.zeros((0, cfg.hidden)) for _ in range(cfg.layers)]
        self.length = 0

    def append(self, layer: int, k_new: np.ndarray, v_new: np.ndarray) -> None:
        self.k[layer] = np.concatenate([self.k[layer], k_new], axis=0)
        self.v[layer] = np.concatenate([self.v[layer], v_new], axis=0)


def dit_forward(z_noisy, k, cond, lv, cfg: DiTConfig) -> Tensor:
    """Per-frame noise prediction for a full sequence (or batch of them).

    z_noisy: (..., U, latent_dim); k: matching (..., U) integer levels; cond:
    TextCondition, caption track, or batched token ids (B, 2) aligned with a
    batched z. Frame t's output depends only on frames <= t, the levels
    <= t, and the condition.
    """
    z_noisy = as_tensor(z_noisy)
    U = z_noisy.shape[-2]
    if U < 1:
        raise ConfigError("dit_forward needs at least one latent frame")
    k = np.asarray(k)
    if k.shape != z_noisy.shape[:-1]:
        raise ConfigError(f"noise levels shape {k.shape} does not match latents {z_noisy.shape[:-1]}")
    if isinstance(cond, TextCondition) and z_noisy.ndim == 3:
        cond = np.tile(np.asarray(cond.tokens, dtype=np.int64), (z_noisy.shape[0], 1))
    if isinstance(cond, np.ndarray):  # batched token ids, one caption per sequence
        tok = ops.take_rows(lv["tok.table"], cond.reshape(-1)).reshape(
            cond.shape[0], cond.shape[1], cfg.hidden
        )
        segs = None
    else:
        tok = None
        segs = [
            (token_embeddings(lv, cap), s, e) for cap, s, e in normalize_condition(cond, U)
        ]

    h = _lin(lv, "inp", z_noisy)
    cond_emb = level_embedding(lv, cfg, k)
    positions = np.arange(U)
    for i in range(cfg.layers):
        h = _layer(lv, cfg, i, h, cond_emb, positions, tok, segs, cache=None)
    return _final(lv, h, cond_emb)


def dit_forward_window(
    z_window,
    k_window: np.ndarray,
    cond,
    lv,
    cfg: DiTConfig,
    cache: DiTCache,
    commit: int = 0,
    total_frames: int | None = None,
) -> Tensor:
    """Forward over window frames [cache.length, cache.length + W) with the
    frozen prefix served from the cache.

    The first `commit` window frames are final: their key/value projections
    are appended to the cache. Returns noise predictions for every window
    frame.
    """
    z_window = as_tensor(z_window)
    W = z_window.shape[-2]
    base = cache.length
    total = total_frames if total_frames is not None else base + W
    segs = [
        (token_embeddings(lv, cap), s, e)
        for cap, s, e in normalize_condition(cond, total)
        if s < base + W and e > base
    ]
    h = _lin(lv, "inp", z_window)
    cond_emb = level_embedding(lv, cfg, k_window)
    positions = np.arange(base, base + W)
    for i in range(cfg.layers):
        h = _layer(lv, cfg, i, h, cond_emb, positions, None, segs, cache=cache, commit=commit)
    cache.length = base + commit
    return _final(lv, h, cond_emb)


def _layer(lv, cfg, i, h, cond_emb, positions, tok, segs, cache, commit=0):
    sa_shift, sa_scale, sa_gate, m_shift, m_scale, m_gate = modulation(lv, i, cond_emb)

    x = ops.layernorm(h) * (1.0 + sa_scale) + sa_shift
    q = _lin(lv, f"l{i}.sa.wq", x)
    k_new = _lin(lv, f"l{i}.sa.wk", x)
    v_new = _lin(lv, f"l{i}.sa.wv", x)
    if cache is not None:
        if commit:
            cache.append(i, k_new.data[:commit], v_new.data[:commit])
        k_all = ops.concat([Tensor(cache.k[i][: positions[0]]), k_new], axis=-2)
        v_all = ops.concat([Tensor(cache.v[i][: positions[0]]), v_new], axis=-2)
        key_pos = np.arange(positions[-1] + 1)
    else:
        k_all, v_all, key_pos = k_new, v_new, positions
    att = causal_attention(
        q,
        k_all,
        v_all,
        cfg.heads,
        positions_q=positions,
        positions_k=key_pos,
        rope_base=cfg.rope_base,
    )
    h = h + sa_gate * _lin(lv, f"l{i}.sa.wo", att)

    x = ops.layernorm(h)
    q = _lin(lv, f"l{i}.ca.wq", x)
    if segs is None:  # batched single-caption mode
        tk = _lin(lv, f"l{i}.ca.wk", tok)
        tv = _lin(lv, f"l{i}.ca.wv", tok)
        ca = cross_attention(q, tk, tv, cfg.heads)
    else:
        base = positions[0]
        parts = []
        for tok_emb, s, e in segs:
            lo, hi = max(s - base, 0), min(e - base, q.shape[-2])
            tk = _lin(lv, f"l{i}.ca.wk", tok_emb)
            tv = _lin(lv, f"l{i}.ca.wv", tok_emb)
            parts.append(cross_attention(q[lo:hi], tk, tv, cfg.heads))
        ca = parts[0] if len(parts) == 1 else ops.concat(parts, axis=-2)
    h = h + _lin(lv, f"l{i}.ca.wo", ca)

    x = ops.layernorm(h) * (1.0 + m_scale) + m_shift
    mlp = _lin(lv, f"l{i}.mlp.fc2", ops.silu(_lin(lv, f"l{i}.mlp.fc1", x)))
    return h + m_gate * mlp


def _final(lv, h, cond_emb):
    mod = _lin(lv, "final.mod", ops.silu(cond_emb))
    H = mod.shape[-1] // 2
    shift, scale = mod[..., :H], mod[..., H:]
    x = ops.layernorm(h) * (1.0 + scale) + shift
    return _lin(lv, "final.out", x)
