"""Evaluation: reconstruction error, jerk-based smoothness, causality
probing, and caption-consistency scoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import ToyCaption, caption_oracle
from .diffusion import DiffusionSchedule
from .rng import RngKey
from .sampler import GenerativeModel, ar_generate, build_fss_matrix, fss_generate
from .types import MotionSequence


def mpjpe(x: MotionSequence | np.ndarray, x_hat: MotionSequence | np.ndarray) -> float:
    """Mean over frames of the Euclidean distance between position channels."""
    a = x.frames if isinstance(x, MotionSequence) else np.asarray(x)
    b = x_hat.frames if isinstance(x_hat, MotionSequence) else np.asarray(x_hat)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a[:, :2] - b[:, :2], axis=1).mean())


@dataclass
class TransitionEval:
    transition: int
    window: int
    peak_jerk: float
    area_under_jerk: float


def jerk_magnitude(x: MotionSequence) -> np.ndarray:
    """|jerk| per frame from the third-order central difference of positions.

    Defined for frames 2..T-3; exact for cubic position trajectories.
    """
    p = x.positions()
    j = (p[4:] - 2 * p[3:-1] + 2 * p[1:-3] - p[:-4]) * (x.fps**3) / 2.0
    return np.linalg.norm(j, axis=1)


def jerk_metrics(x: MotionSequence, transition: int, window: int) -> TransitionEval:
    """Peak jerk and area-under-jerk inside a window centered on a transition.

    The baseline subtracted for the area is the mean |jerk| outside the
    window, so a smooth sequence scores ~0 regardless of its overall
    movement energy.
    """
    if window < 4:
        raise ValueError(f"window must be >= 4 frames, got {window}")
    jerk = jerk_magnitude(x)  # index i corresponds to frame i + 2
    lo = transition - window // 2 - 2
    hi = lo + window
    if lo < 0 or hi > len(jerk):
        raise ValueError(
            f"window [{transition - window // 2}, {transition + window // 2}) does not fit "
            f"inside the jerk-defined range of a {x.num_frames}-frame sequence"
        )
    inside = jerk[lo:hi]
    outside = np.concatenate([jerk[:lo], jerk[hi:]])
    baseline = float(outside.mean()) if outside.size else 0.0
    pj = float(inside.max())
    auj = float(np.maximum(inside - baseline, 0.0).sum() / x.fps)
    return TransitionEval(transition=transition, window=window, peak_jerk=pj, area_under_jerk=auj)


def causality_probe(
    forward: Callable[[np.ndarray], np.ndarray],
    inputs: np.ndarray,
    probe_frame: int,
    trials: int = 4,
    delta_scale: float = 1.0,
    seed: int = 0,
    output_horizon: Callable[[int], int] | None = None,
) -> float:
    """Max absolute change in outputs at frames <= horizon(probe_frame) when
    inputs at frames > probe_frame are perturbed. Exactly 0 for causal maps.

    `output_horizon` maps the probed input frame to the last output index
    that must stay fixed (identity for same-rate maps; floor(p/4) for the
    4x-downsampling encoder, and so on).
    """
    inputs = np.asarray(inputs)
    if not 0 <= probe_frame < inputs.shape[0]:
        raise ValueError(f"probe frame {probe_frame} outside input length {inputs.shape[0]}")
    horizon = probe_frame if output_horizon is None else output_horizon(probe_frame)
    base = np.asarray(forward(inputs))
    gen = np.random.default_rng(seed)
    leak = 0.0
    for _ in range(trials):
        perturbed = inputs.copy()
        perturbed[probe_frame + 1 :] += gen.normal(0.0, delta_scale, perturbed[probe_frame + 1 :].shape)
        out = np.asarray(forward(perturbed))
        leak = max(leak, float(np.abs(out[: horizon + 1] - base[: horizon + 1]).max()))
    return leak


def consistency_eval(
    model: GenerativeModel,
    schedule: DiffusionSchedule,
    captions: list[ToyCaption],
    n_per_caption: int,
    mode: str = "fss",
    uncertainty_scale: int = 2,
    guidance_scale: float = 3.0,
    latent_frames: int = 16,
    fps: float = 20.0,
    seed: int = 0,
    records: list | None = None,
) -> float:
    """Generate n motions per caption and score the fraction the caption
    oracle maps back to their conditioning caption."""
    if mode not in ("ar", "fss"):
        raise ValueError(f"sampler mode must be 'ar' or 'fss', got {mode!r}")
    matrix = None
    if mode == "fss":
        matrix = build_fss_matrix(schedule.K, uncertainty_scale, latent_frames)
    hits = 0
    total = 0
    for ci, caption in enumerate(captions):
        for s in range(n_per_caption):
            rng = RngKey(seed).fork(ci, s)
            if mode == "ar":
                report = ar_generate(
                    model, schedule, latent_frames, caption.condition(), rng,
                    guidance_scale=guidance_scale, fps=fps,
                )
            else:
                report = fss_generate(
                    model, matrix, caption.condition(), rng,
                    schedule=schedule, guidance_scale=guidance_scale, fps=fps,
                )
            pred = caption_oracle(report.motion)
            hit = pred == caption
            hits += int(hit)
            total += 1
            if records is not None:
                records.append(
                    {
                        "caption": str(caption),
                        "sample": s,
                        "mode": mode,
                        "predicted": str(pred) if pred is not None else "unclassifiable",
                        "hit": int(hit),
                        "model_calls": report.model_calls,
                        "wall_time": report.wall_time,
                    }
                )
    return hits / max(total, 1)
