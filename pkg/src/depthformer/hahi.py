"""Hierarchical aggregation and heterogeneous interaction neck.

F → 1×1 project to C_h → unfold → deformable self-attention (+ level embedding)
→ fold → concat with F → 1×1 back to C_n.  When a conv feature G is given:
G → 1×1 project → flatten → deformable cross-attention against X̂ → reshape →
concat with G → 1×1 back to C_g.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .deform_attn import DeformAttention, LevelIndexMap, deform_cross_attention, deform_self_attention, fold_rows
from .nn import Conv, Module
from .tensor import Parameter, Tensor


def median_channel(channels, heads: int = 8) -> int:
    """Median of the level channels, rounded to the nearest multiple of ``heads`` (at least ``heads``)."""
    med = float(np.median(np.asarray(channels, dtype=np.float64)))
    return max(heads, int(heads * np.floor(med / heads + 0.5)))


@dataclass
class HahiConfig:
    level_channels: tuple[int, ...]
    conv_channels: int | None = None
    heads: int = 8
    points: int = 8
    hidden: int | None = None  # C_h; median rule when None

    @property
    def c_h(self) -> int:
        return self.hidden if self.hidden is not None else median_channel(self.level_channels, self.heads)


class Hahi(Module):
    def __init__(self, cfg: HahiConfig, rng: np.random.Generator):
        self.cfg = cfg
        c_h, n = cfg.c_h, len(cfg.level_channels)
        self.proj = [Conv(c, c_h, 1, rng, gain=1.0) for c in cfg.level_channels]
        self.level_embed = Parameter(rng.normal(0.0, 0.5, (n, c_h)))
        self.dsa = DeformAttention(c_h, cfg.heads, n, cfg.points, rng)
        self.fuse = [Conv(c + c_h, c, 1, rng, gain=1.0) for c in cfg.level_channels]
        if cfg.conv_channels:
            cg = cfg.conv_channels
            self.g_proj = Conv(cg, c_h, 1, rng, gain=1.0)
            self.dca = DeformAttention(c_h, cfg.heads, n, cfg.points, rng, predict_reference=True)
            self.g_fuse = Conv(cg + c_h, cg, 1, rng, gain=1.0)

    def __call__(self, feats, g=None):
        return hahi_forward(feats, g, self)


def project_levels(feats, p: Hahi) -> list:
    if len(feats) != len(p.proj):
        raise ValueError(f"expected {len(p.proj)} levels, got {len(feats)}")
    out = []
    for n, (f, conv) in enumerate(zip(feats, p.proj)):
        if f.shape[0] != conv.weight.shape[1]:
            raise ValueError(f"level {n}: {f.shape[0]} channels, projection expects {conv.weight.shape[1]}")
        out.append(conv(f))
    return out


def unfold(feats) -> tuple[Tensor, LevelIndexMap]:
    """Flatten each ``C×H×W`` level to rows (row-major pixels) and stack levels in order."""
    feats = [T.as_tensor(f) for f in feats]
    c = feats[0].shape[0]
    rows = [f.reshape(c, -1).transpose(1, 0) for f in feats]
    return T.concat(rows, axis=0), LevelIndexMap.from_shapes([f.shape[1:] for f in feats])


def fold(x_hat: Tensor, lvmap: LevelIndexMap) -> list:
    return fold_rows(T.as_tensor(x_hat), lvmap)


def hahi_forward(feats, g, p: Hahi):
    """Returns ``(F_o, G_o)``; ``G_o`` is ``None`` when ``g`` is ``None`` (cross path skipped)."""
    f_h = project_levels(feats, p)
    x, lvmap = unfold(f_h)
    x_hat = deform_self_attention(x, lvmap, p.level_embed, p.dsa)
    f_enh = fold(x_hat, lvmap)
    f_o = [conv(T.concat([f, e], axis=0)) for f, e, conv in zip(feats, f_enh, p.fuse)]
    if g is None:
        return f_o, None
    if not hasattr(p, "dca"):
        raise ValueError("HAHI was built without a conv-branch input")
    g = T.as_tensor(g)
    cg, hg, wg = g.shape
    if cg != p.cfg.conv_channels:
        raise ValueError(f"G has {cg} channels, HAHI expects {p.cfg.conv_channels}")
    g_h = p.g_proj(g)
    queries = g_h.reshape(g_h.shape[0], -1).transpose(1, 0)
    g_att = deform_cross_attention(queries, x_hat, lvmap, p.dca)
    g_att = g_att.transpose(1, 0).reshape(-1, hg, wg)
    g_o = p.g_fuse(T.concat([g, g_att], axis=0))
    return f_o, g_o
