"""Training loops for the causal VAE and the causal denoiser, plus
checkpoint I/O."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_io
from .align import AlignConfig, adaptive_lambda, mcos_loss, mdms_loss, project_latents, semantic_oracle
from .data import Dataset
from .diffusion import DiffusionSchedule
from .dit import DiTConfig, dit_forward, init_dit_params, null_token_id
from .nn import AdamW, ParamTree, clip_grad_norm, collect_grads, cosine_lr, ops
from .nn.tensor import Tensor
from .rng import RngKey
from .vae import ENCODER_FINAL_LAYER, VaeConfig, VaeParams, decode_t, encode_t, init_vae_params, vae_loss_t


@dataclass
class TrainSettings:
    steps: int = 1500
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    dtype: str = "float64"
    drop_prob: float = 0.1  # denoiser only
    log_every: int = 100

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def _grad_norm_at(grads: dict[str, np.ndarray], prefix: str) -> float:
    total = sum(float((g * g).sum()) for p, g in grads.items() if p.startswith(prefix))
    return math.sqrt(total)


def train_vae(
    dataset: Dataset,
    vae_cfg: VaeConfig,
    align_cfg: AlignConfig,
    settings: TrainSettings,
    seed: int,
    log=print,
) -> tuple[VaeParams, dict]:
    """Reconstruction + KL + adaptively weighted alignment, AdamW with
    cosine decay and global-norm clipping."""
    root = RngKey(seed)
    init_gen = root.generator("init")
    params = init_vae_params(vae_cfg, init_gen)
    params.tree["align.w"] = init_gen.normal(
        0.0, 1.0 / math.sqrt(vae_cfg.latent_dim), size=(align_cfg.feature_dim, vae_cfg.latent_dim)
    )

    oracle_seed = root.fork(901).seed
    feats = np.stack(
        [
            semantic_oracle(dataset.frames[i], dataset.caption(i).condition(), oracle_seed, align_cfg.feature_dim)
            for i in range(len(dataset))
        ]
    )

    dtype = settings.np_dtype
    work = params.tree.astype(dtype)
    opt = AdamW(work, lr=settings.lr, weight_decay=settings.weight_decay)
    history = {"loss": [], "rec": [], "kl": [], "align": [], "lambda": []}
    t0 = time.perf_counter()
    for step in range(settings.steps):
        gen = root.fork(1, step).generator("reparam")
        idx = gen.integers(0, len(dataset), size=settings.batch_size)
        xb = Tensor(dataset.frames[idx].astype(dtype))
        fb = Tensor(feats[idx].astype(dtype))

        lv = work.bind(requires_grad=True)
        mu, logvar = encode_t(xb, lv, vae_cfg)
        noise = gen.standard_normal(mu.shape).astype(dtype)
        z = mu + ops.exp(logvar * 0.5) * Tensor(noise)
        x_hat = decode_t(z, lv, vae_cfg)
        loss_rk, rec, kl = vae_loss_t(xb, x_hat, mu, logvar, vae_cfg.beta)

        zp = project_latents(z, lv["align.w"])
        mdms_in = zp if align_cfg.mdms_on_projected else z
        loss_align = mcos_loss(zp, fb, align_cfg.m1) + mdms_loss(mdms_in, fb, align_cfg.m2)

        loss_rk.backward()
        g_rk = collect_grads(lv)
        loss_align.backward()
        g_al = collect_grads(lv)

        lam = adaptive_lambda(
            _grad_norm_at(g_rk, ENCODER_FINAL_LAYER),
            _grad_norm_at(g_al, ENCODER_FINAL_LAYER),
            align_cfg,
        )
        grads = {p: g_rk[p] + lam * g_al[p] for p in g_rk}
        clip_grad_norm(grads, settings.clip_norm)
        opt.step(grads, lr=cosine_lr(settings.lr, step, settings.steps))

        history["loss"].append(loss_rk.item() + lam * loss_align.item())
        history["rec"].append(rec.item())
        history["kl"].append(kl.item())
        history["align"].append(loss_align.item())
        history["lambda"].append(lam)
        if settings.log_every and (step + 1) % settings.log_every == 0:
            log(
                f"[vae {step + 1}/{settings.steps}] rec={rec.item():.5f} kl={kl.item():.4f} "
                f"align={loss_align.item():.4f} lambda={lam:.2f} "
                f"({time.perf_counter() - t0:.1f}s)"
            )
    params.tree = work.astype(np.float64)
    return params, history


def encode_dataset(dataset: Dataset, params: VaeParams, chunk: int = 64) -> np.ndarray:
    """Posterior means for every sample, shape (N, U, d_z)."""
    outs = []
    lv = params.tree.bind()
    for lo in range(0, len(dataset), chunk):
        xb = Tensor(dataset.frames[lo : lo + chunk])
        mu, _ = encode_t(xb, lv, params.config)
        outs.append(mu.data)
    return np.concatenate(outs, axis=0)


def train_dit(
    dataset: Dataset,
    vae_params: VaeParams,
    dit_cfg: DiTConfig,
    schedule: DiffusionSchedule,
    settings: TrainSettings,
    seed: int,
    log=print,
) -> tuple[ParamTree, float, dict]:
    """Denoiser training with independent per-frame noise levels and
    condition drop; latents are the VAE posterior means, normalized to unit
    scale. Returns (tree, latent_scale, history)."""
    root = RngKey(seed)
    tree = init_dit_params(dit_cfg, root.generator("init"))

    latents = encode_dataset(dataset, vae_params)
    latent_scale = float(latents.std())
    if latent_scale <= 0:
        latent_scale = 1.0
    z_all = latents / latent_scale

    dtype = settings.np_dtype
    work = tree.astype(dtype)
    opt = AdamW(work, lr=settings.lr, weight_decay=settings.weight_decay)
    null_id = null_token_id(dit_cfg.vocab_size)
    K = schedule.K
    history = {"loss": []}
    t0 = time.perf_counter()
    for step in range(settings.steps):
        gen = root.fork(2, step).generator("reparam")
        idx = gen.integers(0, len(z_all), size=settings.batch_size)
        zb = z_all[idx].astype(dtype)
        B, U, _ = zb.shape

        k = gen.integers(0, K + 1, size=(B, U))
        eps = gen.standard_normal(zb.shape).astype(dtype)
        abar = schedule.alpha_bar[k][..., None].astype(dtype)
        z_tilde = np.sqrt(abar) * zb + np.sqrt(1.0 - abar) * eps

        ids = dataset.tokens[idx].copy()
        dropped = gen.random(B) < settings.drop_prob
        ids[dropped] = null_id

        lv = work.bind(requires_grad=True)
        eps_hat = dit_forward(Tensor(z_tilde), schedule.step_index[k], ids, lv, dit_cfg)
        diff = eps_hat - Tensor(eps)
        loss = (diff * diff).mean()
        loss.backward()
        grads = collect_grads(lv)
        clip_grad_norm(grads, settings.clip_norm)
        opt.step(grads, lr=cosine_lr(settings.lr, step, settings.steps))

        history["loss"].append(loss.item())
        if settings.log_every and (step + 1) % settings.log_every == 0:
            recent = float(np.mean(history["loss"][-settings.log_every :]))
            log(
                f"[dit {step + 1}/{settings.steps}] loss={recent:.5f} "
                f"({time.perf_counter() - t0:.1f}s)"
            )
    return work.astype(np.float64), latent_scale, history


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path: str | Path, tree: ParamTree, meta: dict[str, float]) -> None:
    tree.validate_finite()
    entries = {f"param/{p}": a for p, a in tree.items()}
    for key, value in meta.items():
        entries[f"meta/{key}"] = np.asarray(value)
    tensor_io.write_tensors(path, entries)


def load_checkpoint(path: str | Path) -> tuple[ParamTree, dict[str, np.ndarray]]:
    entries = tensor_io.read_tensors(path)
    tree = ParamTree()
    meta: dict[str, np.ndarray] = {}
    for name, arr in entries.items():
        if name.startswith("param/"):
            tree[name[len("param/") :]] = arr
        elif name.startswith("meta/"):
            meta[name[len("meta/") :]] = arr
    tree.validate_finite()
    return tree, meta
