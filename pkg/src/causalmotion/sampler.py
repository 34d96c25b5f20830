"""Autoregressive and frame-wise samplers over the causal denoiser.

Both samplers run the same windowed forward with key/value caching of
frozen frames and draw from the same keyed noise streams, so with
uncertainty scale L = K the frame-wise schedule degenerates to exactly the
autoregressive sampler, query for query and bit for bit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dit as dit_mod
from . import vae as vae_mod
from .diffusion import DiffusionSchedule, build_schedule, cfg_combine, reverse_step
from .dit import DiTCache, DiTConfig, dit_forward, dit_forward_window, make_null_condition
from .errors import ConfigError
from .nn import ParamTree
from .nn.tensor import Tensor
from .rng import RngKey
from .types import MotionSequence, TextCondition
from .vae import VaeParams


@dataclass
class ScheduleMatrix:
    """Iteration-by-frame grid of noise levels K_{m,t} (rows m, columns t)."""

    levels: np.ndarray
    K: int
    L: int

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)

    @property
    def num_rows(self) -> int:
        return self.levels.shape[0]

    @property
    def num_frames(self) -> int:
        return self.levels.shape[1]

    def validate(self) -> None:
        lv = self.levels
        M, T = lv.shape
        if not np.all(lv[0] == self.K):
            raise ConfigError("first schedule row must hold every frame at K")
        if not np.all(lv[-1] == 0):
            raise ConfigError("last schedule row must hold every frame at 0")
        col_step = lv[:-1] - lv[1:]
        if np.any(col_step < 0) or np.any(col_step > 1):
            raise ConfigError("columns must be non-increasing with per-row steps of at most 1")
        if np.any(np.diff(lv, axis=1) < 0):
            raise ConfigError("rows must be non-decreasing from past to future frames")
        if M != self.K + (T - 1) * self.L + 1:
            raise ConfigError(
                f"row count {M} != K + (T-1)L + 1 = {self.K + (T - 1) * self.L + 1}"
            )


def build_fss_matrix(K: int, L: int, T: int) -> ScheduleMatrix:
    """K_{m,t} = clamp(K - (m-1) + (t-1)L, 0, K): each frame descends one
    step per iteration, starting L iterations after its predecessor."""
    if K < 1 or T < 1:
        raise ConfigError(f"need K >= 1 and T >= 1, got K={K}, T={T}")
    if not 1 <= L <= K:
        raise ConfigError(f"uncertainty scale must satisfy 1 <= L <= K, got L={L}")
    m = np.arange(K + (T - 1) * L + 1)[:, None]
    t = np.arange(T)[None, :]
    levels = np.clip(K - m + t * L, 0, K)
    matrix = ScheduleMatrix(levels=levels, K=K, L=L)
    matrix.validate()
    return matrix


@dataclass
class GenerativeModel:
    """Trained weights plus the pieces needed to run them."""

    vae: VaeParams
    dit_tree: ParamTree
    dit_cfg: DiTConfig
    latent_scale: float = 1.0


@dataclass
class GenerationReport:
    motion: MotionSequence
    latents: np.ndarray
    model_calls: int
    per_frame_calls: list[int]
    wall_time: float
    network_evals: int = 0


class GenerationSession:
    """State for one streaming generation: latents, per-branch caches,
    call accounting, and streaming decode of frozen frames."""

    def __init__(
        self,
        model: GenerativeModel,
        schedule: DiffusionSchedule,
        num_frames: int,
        cond,
        rng: RngKey,
        guidance_scale: float = 1.0,
        init_noise: np.ndarray | None = None,
        fps: float = 20.0,
    ):
        if num_frames < 1:
            raise ConfigError(f"need at least one latent frame, got {num_frames}")
        self.model = model
        self.schedule = schedule
        self.T = num_frames
        self.rng = rng
        self.guidance_scale = guidance_scale
        self.fps = fps
        self.lv = model.dit_tree.bind()
        d_z = model.dit_cfg.latent_dim
        if init_noise is not None:
            if init_noise.shape != (num_frames, d_z):
                raise ConfigError(f"init noise must be ({num_frames}, {d_z})")
            self.lat = init_noise.astype(np.float64).copy()
        else:
            self.lat = np.stack(
                [rng.normal(d_z, "init", frame=t) for t in range(num_frames)], axis=0
            )
        self.positions = np.full(num_frames, schedule.K, dtype=np.int64)
        self.branches = [(cond, DiTCache(model.dit_cfg))]
        if guidance_scale != 1.0:
            null = make_null_condition(model.dit_cfg.vocab_size)
            self.branches.append((null, DiTCache(model.dit_cfg)))
        self.model_calls = 0
        self.network_evals = 0
        self.emitted = np.zeros((0, model.vae.config.motion_dim))
        self.frames_done = 0

    def predict(self, lo: int, hi: int) -> np.ndarray:
        """Guided noise prediction for active frames [lo, hi); one query.

        The window spans [cache length, hi): frozen-but-uncached frames are
        recomputed once at level 0 and their key/value projections committed.
        """
        eps_branches = []
        for cond, cache in self.branches:
            base = cache.length
            window = self.lat[base:hi]
            k_window = np.array(
                [self.schedule.level_at(int(p)) for p in self.positions[base:hi]]
            )
            eps = dit_forward_window(
                Tensor(window),
                k_window,
                cond,
                self.lv,
                self.model.dit_cfg,
                cache,
                commit=lo - base,
                total_frames=self.T,
            )
            eps_branches.append(eps.data[lo - base :])
            self.network_evals += 1
        self.model_calls += 1
        if len(eps_branches) == 1:
            return eps_branches[0]
        return cfg_combine(eps_branches[0], eps_branches[1], self.guidance_scale)

    def step_frames(self, frames: list[int], eps: np.ndarray, lo: int) -> None:
        """Apply one reverse update to each listed frame (snapshot semantics:
        `eps` was computed before any of these updates)."""
        for t in frames:
            k = int(self.positions[t])
            self.lat[t] = reverse_step(self.lat[t], eps[t - lo], k, self.schedule, self.rng, frame=t)
            self.positions[t] = k - 1

    def emit_ready(self) -> None:
        """Decode and emit every frozen-but-unemitted frame (streaming)."""
        done = 0
        while done < self.T and self.positions[done] == 0:
            done += 1
        if done == self.frames_done:
            return
        z = self.lat[:done] * self.model.latent_scale
        motion = vae_mod.decode_t(
            Tensor(z), self.model.vae.tree.bind(), self.model.vae.config
        ).data
        self.emitted = np.concatenate(
            [self.emitted, motion[self.frames_done * vae_mod.DOWNSAMPLE :]], axis=0
        )
        self.frames_done = done

    def report(self, per_frame_calls: list[int], wall_time: float) -> GenerationReport:
        return GenerationReport(
            motion=MotionSequence(frames=self.emitted, fps=self.fps),
            latents=self.lat * self.model.latent_scale,
            model_calls=self.model_calls,
            per_frame_calls=per_frame_calls,
            wall_time=wall_time,
            network_evals=self.network_evals,
        )


def ar_generate(
    model: GenerativeModel,
    schedule: DiffusionSchedule,
    num_frames: int,
    cond,
    rng: RngKey,
    guidance_scale: float = 1.0,
    init_noise: np.ndarray | None = None,
    fps: float = 20.0,
) -> GenerationReport:
    """Strict autoregression: each frame runs all K reverse steps conditioned
    on fully denoised predecessors before the next frame starts. Exactly
    K * num_frames model calls."""
    t0 = time.perf_counter()
    session = GenerationSession(
        model, schedule, num_frames, cond, rng, guidance_scale, init_noise, fps
    )
    per_frame = []
    for t in range(num_frames):
        for _ in range(schedule.K):
            eps = session.predict(t, t + 1)
            session.step_frames([t], eps, t)
        session.emit_ready()
        per_frame.append(schedule.K)
    return session.report(per_frame, time.perf_counter() - t0)


def fss_generate(
    model: GenerativeModel,
    matrix: ScheduleMatrix,
    cond,
    rng: RngKey,
    schedule: DiffusionSchedule | None = None,
    guidance_scale: float = 1.0,
    init_noise: np.ndarray | None = None,
    fps: float = 20.0,
) -> GenerationReport:
    """Frame-wise sampling: walk the schedule matrix row by row, refreshing
    every active frame from a row-start snapshot with one batched query,
    and stream frames out as they reach level 0."""
    matrix.validate()
    if schedule is None:
        schedule = _schedule_for(matrix.K)
    if schedule.K != matrix.K:
        raise ConfigError(f"matrix K={matrix.K} does not match schedule K={schedule.K}")
    t0 = time.perf_counter()
    T = matrix.num_frames
    session = GenerationSession(model, schedule, T, cond, rng, guidance_scale, init_noise, fps)
    per_frame = [0] * T
    calls_at_completion = 0
    next_to_complete = 0
    for m in range(matrix.num_rows - 1):
        if not np.array_equal(session.positions, matrix.levels[m]):
            raise ConfigError(f"session noise levels diverged from schedule row {m}")
        stepping = np.where(matrix.levels[m] - matrix.levels[m + 1] == 1)[0]
        if stepping.size == 0:
            continue
        lo, hi = int(stepping[0]), int(stepping[-1]) + 1
        eps = session.predict(lo, hi)
        session.step_frames(list(stepping), eps, lo)
        session.emit_ready()
        while next_to_complete < T and session.positions[next_to_complete] == 0:
            per_frame[next_to_complete] = session.model_calls - calls_at_completion
            calls_at_completion = session.model_calls
            next_to_complete += 1
    return session.report(per_frame, time.perf_counter() - t0)


def fss_generate_reference(
    model: GenerativeModel,
    matrix: ScheduleMatrix,
    cond,
    rng: RngKey,
    schedule: DiffusionSchedule | None = None,
    guidance_scale: float = 1.0,
    init_noise: np.ndarray | None = None,
) -> np.ndarray:
    """Slow oracle for the batched sampler: per (row, frame) full forwards
    without any caching, with explicit row-start snapshots. Returns final
    latents (already rescaled)."""
    matrix.validate()
    if schedule is None:
        schedule = _schedule_for(matrix.K)
    T = matrix.num_frames
    cfg = model.dit_cfg
    lv = model.dit_tree.bind()
    if init_noise is not None:
        lat = init_noise.astype(np.float64).copy()
    else:
        lat = np.stack([rng.normal(cfg.latent_dim, "init", frame=t) for t in range(T)], axis=0)
    positions = np.full(T, schedule.K, dtype=np.int64)
    null = make_null_condition(cfg.vocab_size)
    for m in range(matrix.num_rows - 1):
        stepping = np.where(matrix.levels[m] - matrix.levels[m + 1] == 1)[0]
        snapshot = lat.copy()
        snap_positions = positions.copy()
        for t in stepping:
            t = int(t)
            prefix = snapshot[: t + 1]
            levels = np.array([schedule.level_at(int(p)) for p in snap_positions[: t + 1]])
            track = [
                (cap, s) for cap, s, _ in dit_mod.normalize_condition(cond, T) if s <= t
            ]
            eps = dit_forward(Tensor(prefix), levels, track, lv, cfg).data[t]
            if guidance_scale != 1.0:
                eps_u = dit_forward(Tensor(prefix), levels, null, lv, cfg).data[t]
                eps = cfg_combine(eps, eps_u, guidance_scale)
            k = int(positions[t])
            lat[t] = reverse_step(snapshot[t], eps, k, schedule, rng, frame=t)
            positions[t] = k - 1
    return lat * model.latent_scale


def _schedule_for(K: int) -> DiffusionSchedule:
    return build_schedule(K)
