"""Procedural depth scenes: a tilted background plane with occluding rectangles.

Colour is a fixed smooth invertible function of log-depth, plus a small
per-rectangle albedo offset, so depth can be read off appearance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..depthmap import DepthMap

ALBEDO_JITTER = 0.04


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    height: int = 64
    width: int = 64
    d_min: float = 1.0
    d_max: float = 10.0
    n_rects: int = 4
    # depth change across the image, as a fraction of the range; drawn from the seed when None
    gradient: tuple[float, float] | None = None


def depth_to_color(depth: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    t = np.log(depth / d_min) / np.log(d_max / d_min)
    return np.stack([t, 1.0 - t * t, 0.5 + 0.4 * np.sin(2 * np.pi * t)])


def gen_scene(spec: SceneSpec) -> tuple[np.ndarray, DepthMap]:
    if not 0 < spec.d_min < spec.d_max:
        raise ValueError(f"scene depth range must satisfy 0 < d_min < d_max, got ({spec.d_min}, {spec.d_max})")
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    span = spec.d_max - spec.d_min
    gx, gy = spec.gradient if spec.gradient is not None else rng.uniform(-0.5, 0.5, 2)
    base = rng.uniform(spec.d_min + 0.3 * span, spec.d_max - 0.1 * span)
    v, u = np.mgrid[0:h, 0:w]
    depth = base + span * (gx * (u / w - 0.5) + gy * (v / h - 0.5))
    depth = np.clip(depth, spec.d_min, spec.d_max)
    image = depth_to_color(depth, spec.d_min, spec.d_max)

    nearest = np.full((h, w), np.inf)
    albedo = np.zeros((3, h, w))
    for _ in range(spec.n_rects):
        rh, rw = rng.integers(h // 8, h // 2 + 1), rng.integers(w // 8, w // 2 + 1)
        top, left = rng.integers(0, h - rh + 1), rng.integers(0, w - rw + 1)
        d = rng.uniform(spec.d_min, spec.d_max)
        jitter = rng.uniform(-ALBEDO_JITTER, ALBEDO_JITTER, 3)
        region = np.zeros((h, w), dtype=bool)
        region[top : top + rh, left : left + rw] = True
        closer = region & (d < nearest)
        nearest[closer] = d
        albedo[:, closer] = jitter[:, None]
    covered = np.isfinite(nearest)
    depth = np.where(covered, nearest, depth)
    image = np.where(covered, depth_to_color(depth, spec.d_min, spec.d_max) + albedo, image)
    return image, DepthMap.dense(depth)


def scene_set(seeds, **kwargs) -> list[tuple[np.ndarray, DepthMap]]:
    return [gen_scene(SceneSpec(seed=int(s), **kwargs)) for s in seeds]
