"""Multi-head, multi-level deformable attention.

Each query predicts, per head ``m``, level ``l`` and point ``k``, a sampling
offset and an attention logit.  Logits are softmax-normalised over the ``L·K``
points of a head.  Sampled values are bilinear reads of per-head value maps.

Coordinates: reference points are normalised to ``[0, 1]²`` as ``(x, y)``;
pixel ``j`` spans ``[j/W, (j+1)/W]`` so its centre is ``(j + 0.5)/W``.  An
offset is divided by the level extent, i.e. it is measured in that level's
pixels, and the pixel-space sample point is ``(ref + off/W)·W − 0.5``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor


@dataclass
class LevelIndexMap:
    """Provenance of every row of an unfolded multi-level matrix."""

    shapes: tuple[tuple[int, int], ...]
    level: np.ndarray
    row: np.ndarray
    col: np.ndarray

    @classmethod
    def from_shapes(cls, shapes) -> "LevelIndexMap":
        shapes = tuple((int(h), int(w)) for h, w in shapes)
        level, row, col = [], [], []
        for n, (h, w) in enumerate(shapes):
            rr, cc = np.divmod(np.arange(h * w), w)
            level.append(np.full(h * w, n))
            row.append(rr)
            col.append(cc)
        return cls(shapes, np.concatenate(level), np.concatenate(row), np.concatenate(col))

    @property
    def n_rows(self) -> int:
        return int(sum(h * w for h, w in self.shapes))

    @property
    def starts(self) -> list[int]:
        return [0, *np.cumsum([h * w for h, w in self.shapes]).tolist()]

    def own_reference_points(self) -> np.ndarray:
        """Normalised pixel-centre location of each row within its own level, ``(x, y)``."""
        hw = np.array(self.shapes, dtype=np.float64)[self.level]
        return np.stack([(self.col + 0.5) / hw[:, 1], (self.row + 0.5) / hw[:, 0]], axis=-1)


class DeformAttention(Module):
    def __init__(self, dim: int, heads: int = 8, levels: int = 4, points: int = 8,
                 rng: np.random.Generator | None = None, predict_reference: bool = False):
        if dim % heads:
            raise ValueError(f"channel {dim} not divisible by {heads} heads")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim, self.heads, self.levels, self.points = dim, heads, levels, points
        self.value_proj = Linear(dim, dim, rng)
        self.output_proj = Linear(dim, dim, rng)
        self.offset_head = Linear(dim, heads * levels * points * 2, rng)
        self.weight_head = Linear(dim, heads * levels * points, rng)
        self.offset_head.weight.data[...] = 0.0
        self.offset_head.bias.data[...] = radial_offset_bias(heads, levels, points).ravel()
        self.weight_head.weight.data[...] = 0.0
        self.weight_head.bias.data[...] = 0.0
        self.ref_head = Linear(dim, 2, rng) if predict_reference else None


def radial_offset_bias(heads: int, levels: int, points: int) -> np.ndarray:
    """Head ``m`` points along direction ``2πm/M``; point ``k`` sits ``k+1`` pixels out."""
    theta = 2 * np.pi * np.arange(heads) / heads
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    dirs = dirs / np.abs(dirs).max(axis=-1, keepdims=True)
    grid = dirs[:, None, None, :] * (np.arange(points) + 1.0)[None, None, :, None]
    return np.broadcast_to(grid, (heads, levels, points, 2)).copy()


def predict_offsets_weights(queries: Tensor, p: DeformAttention) -> tuple[Tensor, Tensor]:
    """Raw offsets ``Q×M×L×K×2`` and weights ``Q×M×L×K`` normalised over ``L·K`` per (query, head)."""
    q = queries.shape[0]
    m, l, k = p.heads, p.levels, p.points
    offsets = p.offset_head(queries).reshape(q, m, l, k, 2)
    logits = p.weight_head(queries).reshape(q, m, l * k)
    weights = T.softmax(logits, axis=-1).reshape(q, m, l, k)
    return offsets, weights


def sample_pixels(refs, offsets: Tensor, level: int, shape: tuple[int, int]) -> Tensor:
    """Pixel-space sample points ``Q×M×K×2`` for one level."""
    h, w = shape
    extent = np.array([w, h], dtype=np.float64)
    ref = T.as_tensor(refs)[:, level][:, None, None, :]
    loc = ref + offsets[:, :, level] / extent
    return loc * extent - 0.5


def deform_attend(values: list, refs, offsets: Tensor, weights: Tensor, p: DeformAttention) -> Tensor:
    """Weighted bilinear gathers per head and level, heads concatenated, then output-projected.

    ``values`` are value-projected per-level maps ``C×H_l×W_l``; ``refs`` is
    ``Q×L×2`` normalised (array or tensor).
    """
    q = offsets.shape[0]
    m, kpts, c = p.heads, p.points, p.dim
    d = c // m
    acc = None
    for lvl, vmap in enumerate(values):
        _, h, w = vmap.shape
        pix = sample_pixels(refs, offsets, lvl, (h, w))  # Q, M, K, 2
        pts = pix.transpose(1, 0, 2, 3).reshape(m, q * kpts, 2)
        sampled = T.bilinear_sample(vmap.reshape(m, d, h, w), pts).reshape(m, d, q, kpts)
        wl = weights[:, :, lvl].transpose(1, 0, 2).reshape(m, 1, q, kpts)
        part = (sampled * wl).sum(axis=-1)  # M, d, Q
        acc = part if acc is None else acc + part
    heads_out = acc.transpose(2, 0, 1).reshape(q, c)
    return p.output_proj(heads_out)


def fold_rows(x: Tensor, lvmap: LevelIndexMap) -> list:
    """Split ``ΣHW×C`` rows back into per-level ``C×H×W`` maps."""
    if x.shape[0] != lvmap.n_rows:
        raise ValueError(f"fold: {x.shape[0]} rows but level map covers {lvmap.n_rows}")
    s = lvmap.starts
    return [x[s[n] : s[n + 1]].transpose(1, 0).reshape(x.shape[1], h, w) for n, (h, w) in enumerate(lvmap.shapes)]


def level_queries(x: Tensor, lvmap: LevelIndexMap, level_embed: Tensor) -> Tensor:
    """Rows plus their level's embedding, so equal features on different levels query differently."""
    return T.as_tensor(x) + T.as_tensor(level_embed)[lvmap.level]


def deform_self_attention(x: Tensor, lvmap: LevelIndexMap, level_embed: Tensor, p: DeformAttention) -> Tensor:
    """Every row attends over all levels, anchored at its own location; returns ``X̂`` shaped like ``X``."""
    x = T.as_tensor(x)
    queries = level_queries(x, lvmap, level_embed)
    offsets, weights = predict_offsets_weights(queries, p)
    refs = np.repeat(lvmap.own_reference_points()[:, None, :], len(lvmap.shapes), axis=1)
    values = fold_rows(p.value_proj(x), lvmap)
    return deform_attend(values, refs, offsets, weights, p)


def predict_reference_points(queries: Tensor, p: DeformAttention, n_levels: int) -> Tensor:
    ref = T.sigmoid(p.ref_head(queries))  # Q, 2
    return T.concat([ref.reshape(ref.shape[0], 1, 2)] * n_levels, axis=1)


def deform_cross_attention(queries: Tensor, x_hat: Tensor, lvmap: LevelIndexMap, p: DeformAttention) -> Tensor:
    """Queries from another source attend over the enhanced multi-level matrix ``X̂``.

    Reference points are ``sigmoid(affine(query))``, shared across levels.
    """
    if p.ref_head is None:
        raise ValueError("cross attention needs a reference-point head (predict_reference=True)")
    queries = T.as_tensor(queries)
    offsets, weights = predict_offsets_weights(queries, p)
    refs = predict_reference_points(queries, p, len(lvmap.shapes))
    values = fold_rows(p.value_proj(T.as_tensor(x_hat)), lvmap)
    return deform_attend(values, refs, offsets, weights, p)
