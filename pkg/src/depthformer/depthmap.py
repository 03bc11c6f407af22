"""Depth maps with validity masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class DepthMap:
    """``H×W`` depths in metres.  ``values`` may be a tensor when gradients are needed."""

    values: np.ndarray | Tensor
    valid: np.ndarray

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if tuple(self.valid.shape) != tuple(self.values.shape):
            raise ValueError(f"mask shape {self.valid.shape} != depth shape {self.values.shape}")

    @classmethod
    def dense(cls, values) -> "DepthMap":
        arr = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
        return cls(values if isinstance(values, Tensor) else arr, np.ones(arr.shape, dtype=bool))

    @classmethod
    def sparse(cls, values) -> "DepthMap":
        """Non-positive or non-finite entries are marked invalid."""
        arr = np.asarray(values, dtype=np.float64)
        return cls(arr, np.isfinite(arr) & (arr > 0))

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.values.shape)

    def array(self) -> np.ndarray:
        return self.values.data if isinstance(self.values, Tensor) else np.asarray(self.values)
