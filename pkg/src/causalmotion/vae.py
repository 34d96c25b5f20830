"""Causal variational autoencoder with 4x temporal downsampling.

Encoder and decoder are stacks of left-padded causal 1-D convolutions
(seven kernel-3 layers plus two residual blocks per side); the residual
blocks carry the two stride-2 stages. Latent step u therefore depends only
on input frames <= 4u, and decoded frame t depends only on latent steps
<= floor(t/4) (0-based), so both directions can run streaming.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .nn import ParamTree, ops
from .nn.tensor import Tensor, as_tensor
from .types import MotionSequence

DOWNSAMPLE = 4
LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


@dataclass
class VaeConfig:
    motion_dim: int = 4
    latent_dim: int = 16
    channels: int = 64
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass
class VaeParams:
    tree: ParamTree
    config: VaeConfig

    @property
    def beta(self) -> float:
        return self.config.beta


@dataclass
class LatentDistribution:
    """Per-step Gaussian posterior over latents; logvar is clamped."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise ValueError("mu and logvar must have matching shapes")


# The encoder's final parameterized layer; adaptive loss balancing measures
# gradient norms here.
ENCODER_FINAL_LAYER = "enc.head"


def init_vae_params(cfg: VaeConfig, gen: np.random.Generator) -> VaeParams:
    tree = ParamTree()
    W, D, Z = cfg.channels, cfg.motion_dim, cfg.latent_dim

    def conv(name, k, cin, cout, scale=2.0):
        std = math.sqrt(scale / (k * cin))
        tree[f"{name}.w"] = gen.normal(0.0, std, size=(k, cin, cout))
        tree[f"{name}.b"] = np.zeros(cout)

    conv("enc.c1", 3, D, W)
    conv("enc.c2", 3, W, W)
    conv("enc.c3", 3, W, W)
    conv("enc.r1.conv1", 3, W, W)
    conv("enc.r1.conv2", 3, W, W)
    conv("enc.r1.skip", 1, W, W)
    conv("enc.c4", 3, W, W)
    conv("enc.c5", 3, W, W)
    conv("enc.r2.conv1", 3, W, W)
    conv("enc.r2.conv2", 3, W, W)
    conv("enc.r2.skip", 1, W, W)
    conv("enc.c6", 3, W, W)
    conv("enc.c7", 3, W, W)
    conv("enc.head", 1, W, 2 * Z, scale=1.0)

    conv("dec.inp", 1, Z, W, scale=1.0)
    conv("dec.c1", 3, W, W)
    conv("dec.c2", 3, W, W)
    conv("dec.r1.conv1", 3, W, W)
    conv("dec.r1.conv2", 3, W, W)
    conv("dec.r1.skip", 1, W, W)
    conv("dec.c3", 3, W, W)
    conv("dec.c4", 3, W, W)
    conv("dec.r2.conv1", 3, W, W)
    conv("dec.r2.conv2", 3, W, W)
    conv("dec.r2.skip", 1, W, W)
    conv("dec.c5", 3, W, W)
    conv("dec.c6", 3, W, W)
    conv("dec.out", 3, W, D, scale=1.0)
    return VaeParams(tree=tree, config=cfg)


def _conv(lv, name, h, stride=1, act=True):
    h = ops.conv1d_causal(h, lv[f"{name}.w"], lv[f"{name}.b"], stride=stride)
    return ops.relu(h) if act else h


def encode_t(x, lv: dict[str, Tensor], cfg: VaeConfig) -> tuple[Tensor, Tensor]:
    """Graph-level encoder; x is (..., T, D) with T divisible by 4."""
    h = _conv(lv, "enc.c1", as_tensor(x))
    h = _conv(lv, "enc.c2", h)
    h = _conv(lv, "enc.c3", h)
    b = _conv(lv, "enc.r1.conv2", _conv(lv, "enc.r1.conv1", h, stride=2), act=False)
    h = ops.relu(_conv(lv, "enc.r1.skip", h, stride=2, act=False) + b)
    h = _conv(lv, "enc.c4", h)
    h = _conv(lv, "enc.c5", h)
    b = _conv(lv, "enc.r2.conv2", _conv(lv, "enc.r2.conv1", h, stride=2), act=False)
    h = ops.relu(_conv(lv, "enc.r2.skip", h, stride=2, act=False) + b)
    h = _conv(lv, "enc.c6", h)
    h = _conv(lv, "enc.c7", h)
    h = _conv(lv, "enc.head", h, act=False)
    mu = h[..., : cfg.latent_dim]
    logvar = ops.clip(h[..., cfg.latent_dim :], LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def decode_t(z, lv: dict[str, Tensor], cfg: VaeConfig) -> Tensor:
    """Graph-level decoder; z is (..., U, latent_dim), output (..., 4U, D)."""
    h = _conv(lv, "dec.inp", as_tensor(z), act=False)
    h = _conv(lv, "dec.c1", h)
    h = _conv(lv, "dec.c2", h)
    up = ops.upsample_repeat(h, 2)
    b = _conv(lv, "dec.r1.conv2", _conv(lv, "dec.r1.conv1", up), act=False)
    h = ops.relu(_conv(lv, "dec.r1.skip", up, act=False) + b)
    h = _conv(lv, "dec.c3", h)
    h = _conv(lv, "dec.c4", h)
    up = ops.upsample_repeat(h, 2)
    b = _conv(lv, "dec.r2.conv2", _conv(lv, "dec.r2.conv1", up), act=False)
    h = ops.relu(_conv(lv, "dec.r2.skip", up, act=False) + b)
    h = _conv(lv, "dec.c5", h)
    h = _conv(lv, "dec.c6", h)
    return _conv(lv, "dec.out", h, act=False)


def pad_to_multiple(frames: np.ndarray) -> np.ndarray:
    """Left-pad by repeating the first frame up to the next multiple of 4."""
    T = frames.shape[0]
    rem = (-T) % DOWNSAMPLE
    if rem == 0:
        return frames
    return np.concatenate([np.repeat(frames[:1], rem, axis=0), frames], axis=0)


def encode(x: MotionSequence | np.ndarray, params: VaeParams) -> LatentDistribution:
    """Posterior over causal latents; latent length is ceil(T/4)."""
    frames = x.frames if isinstance(x, MotionSequence) else np.asarray(x, dtype=np.float64)
    if frames.shape[0] < DOWNSAMPLE:
        raise ValueError(f"input too short: need at least {DOWNSAMPLE} frames, got {frames.shape[0]}")
    frames = pad_to_multiple(frames)
    mu, logvar = encode_t(Tensor(frames), params.tree.bind(), params.config)
    return LatentDistribution(mu=mu.data, logvar=logvar.data)


def reparameterize(dist: LatentDistribution, noise: np.ndarray) -> np.ndarray:
    """z = mu + exp(logvar / 2) * noise."""
    noise = np.asarray(noise)
    if noise.shape != dist.mu.shape:
        raise ValueError(f"noise shape {noise.shape} does not match mu shape {dist.mu.shape}")
    return dist.mu + np.exp(dist.logvar * 0.5) * noise


def decode(z: np.ndarray, params: VaeParams, num_frames: int | None = None) -> MotionSequence:
    """Map latents (U, d_z) back to motion; optionally truncate the left
    padding that `encode` added for lengths not divisible by 4."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError(f"latents must be (U, d_z) with U >= 1, got shape {z.shape}")
    out = decode_t(Tensor(z), params.tree.bind(), params.config).data
    if num_frames is not None:
        out = out[out.shape[0] - num_frames :]
    return MotionSequence(frames=out)


def vae_loss_t(x, x_hat, mu, logvar, beta: float) -> tuple[Tensor, Tensor, Tensor]:
    """Graph-level loss; returns (total, rec, kl), each a scalar Tensor."""
    diff = as_tensor(x_hat) - as_tensor(x)
    rec = (diff * diff).mean()
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    kl = (0.5 * (mu * mu + ops.exp(logvar) - 1.0 - logvar)).mean()
    return rec + beta * kl, rec, kl


def vae_loss(x, x_hat, dist: LatentDistribution, beta: float) -> tuple[float, dict[str, float]]:
    """Element-mean MSE plus beta-weighted closed-form Gaussian KL."""
    x = x.frames if isinstance(x, MotionSequence) else np.asarray(x)
    x_hat = x_hat.frames if isinstance(x_hat, MotionSequence) else np.asarray(x_hat)
    for name, arr in (("x", x), ("x_hat", x_hat), ("mu", dist.mu), ("logvar", dist.logvar)):
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite input to vae_loss", path=name)
    total, rec, kl = vae_loss_t(x, x_hat, dist.mu, dist.logvar, beta)
    return total.item(), {"rec": rec.item(), "kl": kl.item()}


def reconstruct(x: MotionSequence, params: VaeParams) -> MotionSequence:
    """Deterministic round trip through the posterior mean."""
    dist = encode(x, params)
    out = decode(dist.mu, params, num_frames=x.num_frames)
    return MotionSequence(frames=out.frames, fps=x.fps)
