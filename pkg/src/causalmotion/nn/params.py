"""Named parameter storage: a flat mapping from path strings to ndarrays."""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .tensor import Tensor


class ParamTree:
    """Flat path -> ndarray store with unique paths and finite entries."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for path, arr in arrays.items():
                self[path] = arr

    def __setitem__(self, path: str, arr) -> None:
        self._arrays[path] = np.asarray(arr, dtype=np.float64)

    def __getitem__(self, path: str) -> np.ndarray:
        return self._arrays[path]

    def __contains__(self, path: str) -> bool:
        return path in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def paths(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParamTree":
        return ParamTree({p: a.copy() for p, a in self._arrays.items()})

    def astype(self, dtype) -> "ParamTree":
        out = ParamTree()
        out._arrays = {p: a.astype(dtype) for p, a in self._arrays.items()}
        return out

    def num_params(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def validate_finite(self) -> None:
        for path, arr in self._arrays.items():
            if not np.all(np.isfinite(arr)):
                raise NumericalError("non-finite parameter values", path=path)

    def bind(self, requires_grad: bool = False, dtype=None) -> dict[str, Tensor]:
        """Wrap every array in a leaf Tensor (one fresh graph per bind)."""
        return {
            p: Tensor(a if dtype is None else a.astype(dtype), requires_grad=requires_grad)
            for p, a in self._arrays.items()
        }


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Read accumulated gradients off bound leaves (zeros where unreached)."""
    return {
        p: (t.grad if t.grad is not None else np.zeros_like(t.data)) for p, t in leaves.items()
    }
