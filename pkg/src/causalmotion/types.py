"""Shared lightweight data carriers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Channel layout of toy motion frames.
POSITION_DIMS = (0, 1)  # x, y
VELOCITY_DIMS = (2, 3)  # vx, vy
FRAME_DIM = 4


@dataclass
class MotionSequence:
    """A motion clip: frames of shape (T, D) plus its frame rate."""

    frames: np.ndarray
    fps: float = 20.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"motion frames must be 2-D (T, D), got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("motion frames contain non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def positions(self) -> np.ndarray:
        return self.frames[:, list(POSITION_DIMS)]


@dataclass(frozen=True)
class TextCondition:
    """Token ids of a caption (or the reserved null condition)."""

    tokens: tuple[int, ...]
    null_flag: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

