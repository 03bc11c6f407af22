"""Pinhole unprojection of depth maps."""
from __future__ import annotations

import numpy as np

from ..depthmap import DepthMap


def unproject(depth: DepthMap, fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    """``(N, 3)`` camera-frame points for valid pixels, row-major order (u = column, v = row)."""
    if fx <= 0 or fy <= 0:
        raise ValueError("focal lengths must be positive")
    z = depth.array()
    v, u = np.nonzero(depth.valid)
    zz = z[v, u]
    return np.stack([(u - cx) * zz / fx, (v - cy) * zz / fy, zz], axis=-1)
