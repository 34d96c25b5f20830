"""Latent-semantic alignment losses and the synthetic semantic-feature oracle.

Two complementary margin losses tie the causal latents to per-step semantic
features: a marginal cosine loss on projected latents (local similarity) and
a marginal distance-matrix loss on raw latents (relational geometry). The
oracle stands in for a pretrained motion-language encoder: it maps windowed
motion statistics plus a caption embedding through a fixed seeded linear
map, so targets are deterministic and tests can be exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ops
from .nn.tensor import Tensor, as_tensor
from .types import MotionSequence, TextCondition

_CAPTION_EMB_DIM = 8
_STATS_DIM = 6  # mean position (2), mean velocity (2), mean speed, bias


@dataclass
class AlignConfig:
    feature_dim: int = 16
    m1: float = 0.5
    m2: float = 0.25
    lambda_max: float = 10.0
    eps: float = 1e-8
    # Eq-literal reading: the distance-matrix loss sees raw latents. The
    # projected variant is kept selectable for sensitivity runs.
    mdms_on_projected: bool = False

    def __post_init__(self):
        if not (0.0 <= self.m1 < 1.0 and 0.0 <= self.m2 < 1.0):
            raise ValueError(f"margins must lie in [0, 1), got m1={self.m1}, m2={self.m2}")
        if self.lambda_max <= 0:
            raise ValueError(f"lambda_max must be positive, got {self.lambda_max}")


def _check_rows(name: str, arr: np.ndarray) -> None:
    norms = np.linalg.norm(arr, axis=-1)
    bad = np.where(norms == 0.0)[0]
    if bad.size:
        raise ValueError(f"{name} has zero-norm row {int(bad[0])}")


def _row_normalize(x: Tensor) -> Tensor:
    norms = ops.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / norms


def project_latents(z, w) -> Tensor:
    """Linear per-step projection into the semantic feature space (rows z W^T)."""
    z, w = as_tensor(z), as_tensor(w)
    if z.shape[-1] != w.shape[-1]:
        raise ValueError(f"projection mismatch: latents have dim {z.shape[-1]}, W expects {w.shape[-1]}")
    return ops.matmul(z, ops.swapaxes(w, -1, -2))


def mcos_loss(zp, f, m1: float) -> Tensor:
    """Mean over rows of relu(1 - m1 - cos(zp_row, f_row))."""
    zp, f = as_tensor(zp), as_tensor(f)
    if zp.shape != f.shape:
        raise ValueError(f"shape mismatch: {zp.shape} vs {f.shape}")
    _check_rows("projected latents", zp.data)
    _check_rows("semantic features", f.data)
    cos = (_row_normalize(zp) * _row_normalize(f)).sum(axis=-1)
    return ops.relu((1.0 - m1) - cos).mean()


def mdms_loss(z, f, m2: float) -> Tensor:
    """Mean over all ordered pairs (i, j) of relu(|cos(z_i,z_j) - cos(f_i,f_j)| - m2)."""
    z, f = as_tensor(z), as_tensor(f)
    if z.shape[-2] != f.shape[-2]:
        raise ValueError(f"row-count mismatch: {z.shape[-2]} vs {f.shape[-2]}")
    _check_rows("latents", z.data)
    _check_rows("semantic features", f.data)
    zn = _row_normalize(z)
    fn = _row_normalize(f)
    gram_z = ops.matmul(zn, ops.swapaxes(zn, -1, -2))
    gram_f = ops.matmul(fn, ops.swapaxes(fn, -1, -2))
    return ops.relu(ops.abs_(gram_z - gram_f) - m2).mean()


def align_loss(z, f, w, cfg: AlignConfig) -> Tensor:
    zp = project_latents(z, w)
    mdms_input = zp if cfg.mdms_on_projected else z
    return mcos_loss(zp, f, cfg.m1) + mdms_loss(mdms_input, f, cfg.m2)


def adaptive_lambda(grad_rec_norm: float, grad_align_norm: float, cfg: AlignConfig) -> float:
    """Balance the alignment loss against reconstruction by gradient norms
    at the encoder's final layer; capped at lambda_max."""
    if grad_rec_norm < 0 or grad_align_norm < 0:
        raise ValueError("gradient norms must be non-negative")
    return min(cfg.lambda_max, grad_rec_norm / (grad_align_norm + cfg.eps))


def semantic_oracle(
    x: MotionSequence | np.ndarray,
    caption: TextCondition,
    seed: int,
    feature_dim: int = 16,
) -> np.ndarray:
    """Deterministic per-window semantic features, shape (ceil(T/4), d_f).

    Each 4-frame window contributes its mean position, mean velocity, mean
    speed, and a bias; the caption contributes a fixed seeded embedding. A
    fixed seeded linear map mixes both into d_f dims, so identical
    (motion, caption, seed) always produce bit-identical features.
    """
    frames = x.frames if isinstance(x, MotionSequence) else np.asarray(x, dtype=np.float64)
    T = frames.shape[0]
    n = -(-T // 4)

    stats = np.zeros((n, _STATS_DIM))
    for i in range(n):
        win = frames[i * 4 : min((i + 1) * 4, T)]
        stats[i, 0:2] = win[:, 0:2].mean(axis=0)
        stats[i, 2:4] = win[:, 2:4].mean(axis=0)
        stats[i, 4] = np.linalg.norm(win[:, 2:4], axis=1).mean()
        stats[i, 5] = 1.0

    cap_gen = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(7001, *caption.tokens)))
    )
    cap_emb = cap_gen.standard_normal(_CAPTION_EMB_DIM)
    mix_gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(7002,))))
    mix = mix_gen.standard_normal((_STATS_DIM + _CAPTION_EMB_DIM, feature_dim))
    mix /= np.sqrt(_STATS_DIM + _CAPTION_EMB_DIM)

    full = np.concatenate([stats, np.tile(cap_emb, (n, 1))], axis=1)
    feats = full @ mix
    _check_rows("oracle features", feats)
    return feats
