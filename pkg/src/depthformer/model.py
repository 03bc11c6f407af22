"""Full network: Transformer branch (+ optional conv branch) → optional HAHI → decoder → depth."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .conv_branch import ConvBranch, ConvStemConfig
from .decoder import Decoder, DecoderConfig, decode, depth_head
from .hahi import Hahi, HahiConfig, hahi_forward
from .nn import Module
from .swin import BranchConfig, SwinBranch, encode_transformer
from .tensor import Tensor

VARIANTS = {
    "baseline": (False, False),
    "+CB": (True, False),
    "+HAHI": (False, True),
    "+CB+HAHI": (True, True),
}


@dataclass
class ModelConfig:
    branch: BranchConfig = field(default_factory=BranchConfig)
    conv: ConvStemConfig = field(default_factory=ConvStemConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    heads: int = 8
    points: int = 8
    use_conv_branch: bool = True
    use_hahi: bool = True

    @classmethod
    def variant(cls, name: str, **kwargs) -> "ModelConfig":
        cb, hahi = VARIANTS[name]
        return cls(use_conv_branch=cb, use_hahi=hahi, **kwargs)

    @property
    def variant_name(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.use_conv_branch, self.use_hahi):
                return name
        raise AssertionError("unreachable")

    def hahi_config(self) -> HahiConfig:
        return HahiConfig(
            level_channels=tuple(self.branch.channels),
            conv_channels=self.conv.channels if self.use_conv_branch else None,
            heads=self.heads,
            points=self.points,
        )


class DepthFormer(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.swin = SwinBranch(cfg.branch, rng)
        self.conv = ConvBranch(cfg.conv, rng) if cfg.use_conv_branch else None
        self.hahi = Hahi(cfg.hahi_config(), rng) if cfg.use_hahi else None
        self.decoder = Decoder(cfg.branch.channels, cfg.conv.channels if cfg.use_conv_branch else None, cfg.decoder, rng)

    def logits(self, image) -> Tensor:
        """Decoder output ``1×H/2×W/2``."""
        image = T.as_tensor(image)
        feats = encode_transformer(image, self.cfg.branch, self.swin)
        g = self.conv(image) if self.conv is not None else None
        if self.hahi is not None:
            feats, g = hahi_forward(feats, g, self.hahi)
        return decode(feats, g, self.decoder)

    def predict(self, image, full_resolution: bool = True) -> Tensor:
        """Depth in metres; bilinearly upsampled 2× to the input size unless ``full_resolution`` is off."""
        image = T.as_tensor(image)
        d = self.cfg.decoder
        depth = depth_head(self.logits(image), d.d_min, d.d_max)[0]
        if full_resolution:
            depth = T.resize_bilinear(depth, image.shape[1:])
        return depth


def config_to_flat(cfg: ModelConfig) -> dict[str, object]:
    """Flatten to ``section.key`` pairs for manifests and config files."""
    flat: dict[str, object] = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if hasattr(v, "__dataclass_fields__"):
            for sub in fields(v):
                flat[f"{f.name}.{sub.name}"] = getattr(v, sub.name)
        else:
            flat[f.name] = v
    return flat
