"""UpConv decoder, bounded depth head and the scale-invariant log loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .depthmap import DepthMap
from .nn import Conv, Module
from .tensor import Tensor


@dataclass
class DecoderConfig:
    channels: tuple[int, ...] = (128, 64, 32, 16)  # one width per stage, coarse to final
    d_min: float = 0.5
    d_max: float = 12.0
    slope: float = 0.2

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"depth range must satisfy 0 < d_min < d_max, got ({self.d_min}, {self.d_max})")


@dataclass
class LossConfig:
    lam: float = 0.85
    alpha: float = 10.0


class UpConv(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv_a = Conv(cin, cout, 3, rng)
        self.conv_b = Conv(cout, cout, 3, rng)

    def __call__(self, x: Tensor, slope: float) -> Tensor:
        return T.leaky_relu(self.conv_b(T.leaky_relu(self.conv_a(x), slope)), slope)


class Decoder(Module):
    """Coarsest level first; each stage upsamples 2× (nearest) and fuses the next-finer skip.

    With ``N`` levels there are ``N-1`` skip stages, one final skip-free stage
    and a 3×3 head to one channel, so the output is twice the finest extent.
    """

    def __init__(self, level_channels, conv_channels: int | None, cfg: DecoderConfig, rng: np.random.Generator):
        n = len(level_channels)
        if len(cfg.channels) != n:
            raise ValueError(f"decoder needs {n} stage widths, got {len(cfg.channels)}")
        self.cfg = cfg
        self.level_channels = tuple(level_channels)
        self.conv_channels = conv_channels
        cg = conv_channels or 0
        self.stages = []
        prev = level_channels[-1]
        for i in range(n - 1):
            skip = level_channels[n - 2 - i] + (cg if i == n - 2 else 0)
            self.stages.append(UpConv(prev + skip, cfg.channels[i], rng))
            prev = cfg.channels[i]
        self.final = UpConv(prev + (cg if n == 1 else 0), cfg.channels[-1], rng)
        self.head = Conv(cfg.channels[-1], 1, 3, rng, gain=1.0)

    def __call__(self, feats, g=None) -> Tensor:
        return decode(feats, g, self)


def decode(feats, g, p: Decoder) -> Tensor:
    n = len(feats)
    if n != len(p.level_channels):
        raise ValueError(f"decoder built for {len(p.level_channels)} levels, got {n}")
    for i, (f, c) in enumerate(zip(feats, p.level_channels)):
        if f.shape[0] != c:
            raise ValueError(f"decoder skip level {i}: {f.shape[0]} channels, expected {c}")
    if (g is None) != (p.conv_channels is None):
        raise ValueError("decoder G input presence does not match its configuration")
    slope = p.cfg.slope
    x = T.as_tensor(feats[-1])
    for i, stage in enumerate(p.stages):
        skip = feats[n - 2 - i]
        up = T.upsample_nearest2x(x)
        if up.shape[1:] != skip.shape[1:]:
            raise ValueError(f"decoder stage {i}: upsampled {up.shape[1:]} vs skip {skip.shape[1:]}")
        parts = [up, skip]
        if g is not None and i == n - 2:
            if g.shape[1:] != skip.shape[1:]:
                raise ValueError(f"decoder stage {i}: G extent {g.shape[1:]} vs finest level {skip.shape[1:]}")
            parts.append(g)
        x = stage(T.concat(parts, axis=0), slope)
    if g is not None and n == 1:
        x = T.concat([x, g], axis=0)
    x = p.final(T.upsample_nearest2x(x), slope)
    return p.head(x)


def depth_head(logits, d_min: float, d_max: float) -> Tensor:
    """``d_min + (d_max − d_min)·sigmoid(logit)``."""
    if not 0 < d_min < d_max:
        raise ValueError(f"invalid depth range ({d_min}, {d_max})")
    return T.sigmoid(logits) * (d_max - d_min) + d_min


def silog_loss(pred, gt: DepthMap, cfg: LossConfig = LossConfig()) -> Tensor:
    """``α·sqrt(mean(h²) − λ·mean(h)²)`` over valid pixels, ``h = log pred − log gt``.

    ``pred`` is a :class:`DepthMap` or a tensor/array of the same shape as
    ``gt``.  The radicand is clamped at zero.
    """
    pred_valid = None
    if isinstance(pred, DepthMap):
        pred_valid, pred = pred.valid, pred.values
    pred = T.as_tensor(pred)
    if tuple(pred.shape) != tuple(gt.shape):
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    mask = gt.valid if pred_valid is None else gt.valid & pred_valid
    t = int(mask.sum())
    if t == 0:
        raise ValueError("silog_loss: no valid ground-truth pixels")
    gt_vals = gt.array()[mask]
    if np.any(gt_vals <= 0) or np.any(pred.data[mask] <= 0):
        raise ValueError("silog_loss: non-positive depth on a valid pixel")
    h = T.log(pred[mask]) - np.log(gt_vals)
    radicand = (h * h).sum() * (1.0 / t) - (h.sum() * h.sum()) * (cfg.lam / t**2)
    return T.sqrt(T.clamp_min(radicand, 0.0)) * cfg.alpha
