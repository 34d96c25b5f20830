"""Noise schedules, per-frame forward diffusion, the per-frame-noise training
loss, the ancestral reverse update, and classifier-free guidance.

Every stochastic draw goes through the keyed RNG (see rng.py), addressed by
(frame, step, kind), so a frame's noise never depends on what any other
frame is doing and both samplers can replay identical streams.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dit
from .dit import DiTConfig, drop_condition
from .errors import ConfigError
from .nn.tensor import Tensor, as_tensor
from .rng import RngKey
from .types import TextCondition

BETA_MIN, BETA_MAX = 1e-4, 2e-2


@dataclass
class DiffusionSchedule:
    """Arrays for steps 1..K; alpha_bar has K+1 entries with alpha_bar[0] = 1.

    `step_index` maps schedule positions to the noise levels the denoiser is
    conditioned on; it is the identity for a full schedule and carries the
    retained original indices after subsampling.
    """

    K: int
    alpha: np.ndarray  # (K,) for steps 1..K
    alpha_bar: np.ndarray  # (K+1,) for steps 0..K
    sigma: np.ndarray  # (K,) for steps 1..K; sigma at step 1 is 0
    step_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.step_index.size == 0:
            self.step_index = np.arange(self.K + 1, dtype=np.int64)

    def alpha_at(self, k: int) -> float:
        return float(self.alpha[k - 1])

    def alpha_bar_at(self, k: int) -> float:
        return float(self.alpha_bar[k])

    def sigma_at(self, k: int) -> float:
        return float(self.sigma[k - 1])

    def level_at(self, k: int) -> int:
        """Noise level the denoiser sees for schedule position k (0..K)."""
        return int(self.step_index[k])

    def validate(self) -> None:
        if self.alpha_bar[0] != 1.0:
            raise ConfigError("alpha_bar[0] must be 1")
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        if not np.all((self.alpha > 0) & (self.alpha < 1)):
            raise ConfigError("alpha entries must lie in (0, 1)")
        if np.any(self.sigma < 0) or self.sigma[0] != 0.0:
            raise ConfigError("sigma must be non-negative with sigma at step 1 equal to 0")


def build_schedule(K: int, kind: str = "linear") -> DiffusionSchedule:
    """Linear: beta from 1e-4 to 2e-2 over K steps. Cosine: squared-cosine
    alpha_bar. Ancestral sigma_k = sqrt(beta_k), forced to 0 at the final
    denoising step k=1."""
    if K < 1:
        raise ConfigError(f"need K >= 1 diffusion steps, got {K}")
    if kind == "linear":
        beta = np.linspace(BETA_MIN, BETA_MAX, K)
        alpha = 1.0 - beta
        alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    elif kind == "cosine":
        s = 0.008
        ts = np.arange(K + 1) / K
        f = np.cos((ts + s) / (1.0 + s) * np.pi / 2) ** 2
        alpha_bar = f / f[0]
        alpha = np.clip(alpha_bar[1:] / alpha_bar[:-1], 1e-8, 0.9999)
        alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
        beta = 1.0 - alpha
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    sigma = np.sqrt(beta)
    sigma[0] = 0.0
    sched = DiffusionSchedule(K=K, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)
    sched.validate()
    return sched


def subsample_schedule(schedule: DiffusionSchedule, K_infer: int) -> DiffusionSchedule:
    """Retain evenly spaced steps (stride K/K_infer, rounded) and recompute
    effective per-step alphas from consecutive retained alpha_bar values.
    `step_index` maps each retained position to its original training index
    so the denoiser keeps seeing training-time noise levels."""
    if not 1 <= K_infer <= schedule.K:
        raise ConfigError(f"K_infer must be in [1, {schedule.K}], got {K_infer}")
    retained = np.rint(np.arange(1, K_infer + 1) * (schedule.K / K_infer)).astype(np.int64)
    alpha_bar = np.concatenate([[1.0], schedule.alpha_bar[retained]])
    alpha = alpha_bar[1:] / alpha_bar[:-1]
    sigma = np.sqrt(1.0 - alpha)
    sigma[0] = 0.0
    sub = DiffusionSchedule(
        K=K_infer,
        alpha=alpha,
        alpha_bar=alpha_bar,
        sigma=sigma,
        step_index=np.concatenate([[0], retained]),
    )
    sub.validate()
    return sub


def forward_diffuse(
    z: np.ndarray, k: np.ndarray, schedule: DiffusionSchedule, rng: RngKey
) -> tuple[np.ndarray, np.ndarray]:
    """Noise each frame to its own level: z~_t = sqrt(abar_{k_t}) z_t +
    sqrt(1 - abar_{k_t}) eps_t. Returns (z_tilde, eps); eps_t is drawn on the
    (frame=t, step=k_t) stream so frames never share draws."""
    z = np.asarray(z, dtype=np.float64)
    k = np.asarray(k, dtype=np.int64)
    if k.shape != z.shape[:-1]:
        raise ConfigError(f"noise levels shape {k.shape} does not match latents {z.shape[:-1]}")
    if k.size and (k.min() < 0 or k.max() > schedule.K):
        raise ConfigError(f"noise level out of range [0, {schedule.K}]")
    eps = np.zeros_like(z)
    for t in range(z.shape[0]):
        eps[t] = rng.normal(z.shape[-1], "reparam", frame=t, step=int(k[t]))
    abar = schedule.alpha_bar[k][..., None]
    z_tilde = np.sqrt(abar) * z + np.sqrt(1.0 - abar) * eps
    return z_tilde, eps


def df_training_loss(
    lv,
    z: np.ndarray,
    cond: TextCondition,
    schedule: DiffusionSchedule,
    rng: RngKey,
    cfg: DiTConfig,
    drop_prob: float = 0.1,
    force_levels: np.ndarray | None = None,
) -> Tensor:
    """Per-frame-noise denoising loss for one latent sequence (U, d_z).

    Samples k_t ~ Uniform{0..K} independently per frame (unless
    `force_levels` pins them), noises each frame to its level, predicts the
    noise with the causal denoiser, and returns the mean squared residual
    over frames and dims. The condition is dropped to the null caption with
    probability `drop_prob` on the drop stream.
    """
    z = np.asarray(z, dtype=np.float64)
    U = z.shape[0]
    if force_levels is None:
        k = np.array([int(rng.integers(0, schedule.K, (), "levels", frame=t)) for t in range(U)])
    else:
        k = np.asarray(force_levels, dtype=np.int64)
    z_tilde, eps = forward_diffuse(z, k, schedule, rng)
    cond = drop_condition(cond, drop_prob, rng, cfg.vocab_size)
    levels = schedule.step_index[k]
    eps_hat = dit.dit_forward(Tensor(z_tilde), levels, cond, lv, cfg)
    diff = eps_hat - Tensor(eps)
    return (diff * diff).mean()


def full_sequence_loss(
    lv,
    z: np.ndarray,
    cond: TextCondition,
    schedule: DiffusionSchedule,
    rng: RngKey,
    cfg: DiTConfig,
    k: int,
) -> Tensor:
    """Reference single-level objective: every frame noised to the same k."""
    levels = np.full(z.shape[0], k, dtype=np.int64)
    z_tilde, eps = forward_diffuse(np.asarray(z, dtype=np.float64), levels, schedule, rng)
    eps_hat = dit.dit_forward(Tensor(z_tilde), schedule.step_index[levels], cond, lv, cfg)
    diff = eps_hat - Tensor(eps)
    return (diff * diff).mean()


def reverse_step(
    z_k: np.ndarray,
    eps_hat: np.ndarray,
    k: int,
    schedule: DiffusionSchedule,
    rng: RngKey,
    frame: int = 0,
) -> np.ndarray:
    """One ancestral update from schedule position k to k-1:
    z_{k-1} = (z_k - (1-alpha_k)/sqrt(1-abar_k) * eps_hat) / sqrt(alpha_k)
              + sigma_k w. Noise w comes from the (frame, k) ancestral stream;
    sigma is 0 at the final step k=1."""
    if not 1 <= k <= schedule.K:
        raise ConfigError(f"reverse step needs k in [1, {schedule.K}], got {k}")
    a = schedule.alpha_at(k)
    abar = schedule.alpha_bar_at(k)
    mean = (z_k - ((1.0 - a) / np.sqrt(1.0 - abar)) * eps_hat) / np.sqrt(a)
    sig = schedule.sigma_at(k)
    if sig == 0.0:
        return mean
    return mean + sig * rng.normal(np.shape(z_k), "ancestral", frame=frame, step=k)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, scale: float) -> np.ndarray:
    """eps = eps_uncond + scale * (eps_cond - eps_uncond)."""
    eps_cond, eps_uncond = np.asarray(eps_cond), np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ConfigError(f"guidance shapes differ: {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_uncond + scale * (eps_cond - eps_uncond)
