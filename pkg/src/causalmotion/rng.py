"""Counter-based keyed randomness.

Every draw is addressed by (seed, kind, frame, step). Identical keys give
bit-identical draws, and distinct keys give statistically independent
streams, so the autoregressive and frame-wise samplers can consume exactly
the same noise regardless of the order in which frames are visited.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Draw kinds. "levels" is the per-frame noise-level sampling stream used by
# the training loss; the remaining four cover init noise, ancestral noise,
# reparameterization draws, and condition drop.
KINDS = ("init", "ancestral", "reparam", "drop", "levels")
_KIND_ID = {name: i for i, name in enumerate(KINDS)}


@dataclass(frozen=True)
class RngKey:
    """Root of a keyed random stream.

    `fork` derives an independent child root (used per training step or per
    sample); `generator` addresses one concrete draw site.
    """

    seed: int

    def fork(self, *labels: int) -> "RngKey":
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(x) for x in labels))
        return RngKey(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def generator(self, kind: str, frame: int = 0, step: int = 0) -> np.random.Generator:
        if kind not in _KIND_ID:
            raise ValueError(f"unknown draw kind {kind!r}; expected one of {KINDS}")
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(_KIND_ID[kind], int(frame), int(step))
        )
        return np.random.Generator(np.random.PCG64(ss))

    def normal(self, shape, kind: str, frame: int = 0, step: int = 0, dtype=np.float64) -> np.ndarray:
        return self.generator(kind, frame, step).standard_normal(shape).astype(dtype, copy=False)

    def uniform(self, kind: str, frame: int = 0, step: int = 0) -> float:
        return float(self.generator(kind, frame, step).random())

    def integers(self, low: int, high: int, shape, kind: str, frame: int = 0, step: int = 0) -> np.ndarray:
        """Uniform integers in [low, high] inclusive."""
        return self.generator(kind, frame, step).integers(low, high, size=shape, endpoint=True)
