"""Convolution branch: a stride-2 stem and exactly one residual unit (overall stride 4).

Batch norm is replaced by a per-channel affine since desk batches hold one or
two images.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv, Module
from .tensor import Parameter, Tensor


@dataclass
class ConvStemConfig:
    channels: int = 64


class ChannelAffine(Module):
    def __init__(self, channels: int):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return x * self.scale.reshape(-1, 1, 1) + self.shift.reshape(-1, 1, 1)


class ConvBranch(Module):
    def __init__(self, cfg: ConvStemConfig, rng: np.random.Generator):
        c = cfg.channels
        self.cfg = cfg
        self.stem = Conv(3, c, 3, rng, stride=2)
        self.stem_affine = ChannelAffine(c)
        self.conv1 = Conv(c, c, 3, rng, stride=2)
        self.affine1 = ChannelAffine(c)
        self.conv2 = Conv(c, c, 3, rng, stride=1, gain=0.5)
        self.affine2 = ChannelAffine(c)
        self.skip = Conv(c, c, 1, rng, stride=2, gain=1.0)

    def __call__(self, image: Tensor) -> Tensor:
        return encode_conv(image, self)


def encode_conv(image: Tensor, p: ConvBranch) -> Tensor:
    """``G = relu(F(s) + proj(s))`` with ``s = relu(affine(stem(x)))``; output is ``C_g×H/4×W/4``."""
    image = T.as_tensor(image)
    _, h, w = image.shape
    if h % 4 or w % 4:
        raise ValueError(f"conv branch needs extents divisible by 4, got {h}x{w}")
    s = T.relu(p.stem_affine(p.stem(image)))
    r = T.relu(p.affine1(p.conv1(s)))
    r = p.affine2(p.conv2(r))
    return T.relu(r + p.skip(s))


def receptive_radius() -> int:
    """Input-pixel radius of influence of one output position (stem 3×3/2, conv 3×3/2, conv 3×3/1)."""
    # jumps 1, 2, 4; radius grows by (k-1)/2 * jump per layer, plus the 1x1 skip
    return 1 * 1 + 1 * 2 + 1 * 4
