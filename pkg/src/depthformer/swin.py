"""Transformer branch: patch embedding, shifted-window layers, patch merging.

Token grids are ``C×H×W`` at the public surface; layers work channel-last
(``H×W×C``) internally so LayerNorm and the projections act on the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .nn import LayerNormParams, Linear, Module
from .tensor import Tensor

MASK_BIAS = -1e9

FeaturePyramid = list  # list[Tensor], fine-to-coarse, each C_n×H_n×W_n


@dataclass
class BranchConfig:
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple[int, ...] = (2, 2, 2, 2)
    window_size: int = 4
    num_heads: tuple[int, ...] = (2, 4, 8, 16)
    out_levels: int = 4
    mlp_ratio: int = 4
    ln_eps: float = 1e-5

    @property
    def n_stages(self) -> int:
        return len(self.depths)

    @property
    def channels(self) -> list[int]:
        return [self.embed_dim * 2**i for i in range(self.out_levels)]

    def validate(self, height: int, width: int) -> None:
        if len(self.num_heads) != self.n_stages:
            raise ValueError(f"num_heads has {len(self.num_heads)} entries for {self.n_stages} stages")
        if not 1 <= self.out_levels <= self.n_stages:
            raise ValueError(f"out_levels={self.out_levels} must be in [1, {self.n_stages}]")
        mult = self.patch_size * 2 ** (self.n_stages - 1)
        if height % mult or width % mult:
            raise ValueError(f"image {height}x{width} must have extents divisible by {mult} "
                             f"(patch {self.patch_size} x 2^{self.n_stages - 1} merges)")
        gh, gw = height // self.patch_size, width // self.patch_size
        for s in range(self.n_stages):
            c = self.embed_dim * 2**s
            if c % self.num_heads[s]:
                raise ValueError(f"stage {s}: {c} channels not divisible by {self.num_heads[s]} heads")
            for g in (gh, gw):
                w = min(self.window_size, g)
                if g % w:
                    raise ValueError(f"stage {s}: window {w} does not divide token grid extent {g}")
            gh, gw = gh // 2, gw // 2


# ---------------------------------------------------------------------------
# parameters


class PatchEmbed(Module):
    def __init__(self, patch_size: int, dim: int, rng: np.random.Generator):
        self.patch_size = patch_size
        self.proj = Linear(3 * patch_size * patch_size, dim, rng)


class WindowAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng, gain=0.5)


class TransformerLayer(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, shift: bool, rng: np.random.Generator, eps: float = 1e-5):
        self.shift = shift
        self.eps = eps
        self.norm1 = LayerNormParams(dim)
        self.attn = WindowAttention(dim, heads, rng)
        self.norm2 = LayerNormParams(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng, gain=0.5)


class PatchMerge(Module):
    def __init__(self, dim: int, rng: np.random.Generator, eps: float = 1e-5):
        self.eps = eps
        self.norm = LayerNormParams(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)


class SwinBranch(Module):
    def __init__(self, cfg: BranchConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = PatchEmbed(cfg.patch_size, cfg.embed_dim, rng)
        self.stages = []
        self.merges = []
        for s, depth in enumerate(cfg.depths[: cfg.out_levels]):
            dim = cfg.embed_dim * 2**s
            self.stages.append([
                TransformerLayer(dim, cfg.num_heads[s], cfg.mlp_ratio, shift=bool(i % 2), rng=rng, eps=cfg.ln_eps)
                for i in range(depth)
            ])
            if s + 1 < cfg.out_levels:
                self.merges.append(PatchMerge(dim, rng, eps=cfg.ln_eps))

    def named_parameters(self, prefix: str = ""):
        yield from self.embed.named_parameters(prefix + "embed.")
        for s, stage in enumerate(self.stages):
            for i, layer in enumerate(stage):
                yield from layer.named_parameters(f"{prefix}stages.{s}.{i}.")
        for s, merge in enumerate(self.merges):
            yield from merge.named_parameters(f"{prefix}merges.{s}.")

    def __call__(self, image: Tensor) -> FeaturePyramid:
        return encode_transformer(image, self.cfg, self)


# ---------------------------------------------------------------------------
# operations


def _embed_hwc(image: Tensor, embed: PatchEmbed) -> Tensor:
    c, h, w = image.shape
    p = embed.patch_size
    if c != 3:
        raise ValueError(f"expected a 3-channel image, got {c}")
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} must be divisible by patch size {p}")
    patches = image.reshape(3, h // p, p, w // p, p).transpose(1, 3, 0, 2, 4).reshape(h // p, w // p, 3 * p * p)
    return embed.proj(patches)


def patch_partition_embed(image: Tensor, embed: PatchEmbed) -> Tensor:
    """Split into ``p×p`` patches, flatten each (channel-major) and embed linearly."""
    return T.as_tensor(_embed_hwc(T.as_tensor(image), embed)).transpose(2, 0, 1)


@lru_cache(maxsize=64)
def shift_mask(h: int, w: int, wh: int, ww: int, sh: int, sw: int) -> np.ndarray:
    """Additive ``(nW, T, T)`` bias blocking attention between wrapped regions."""
    region = np.zeros((h, w), dtype=np.int64)
    rows = [slice(0, h - wh), slice(h - wh, h - sh), slice(h - sh, h)] if sh else [slice(0, h)]
    cols = [slice(0, w - ww), slice(w - ww, w - sw), slice(w - sw, w)] if sw else [slice(0, w)]
    label = 0
    for r in rows:
        for c in cols:
            region[r, c] = label
            label += 1
    win = region.reshape(h // wh, wh, w // ww, ww).transpose(0, 2, 1, 3).reshape(-1, wh * ww)
    mask = np.where(win[:, :, None] != win[:, None, :], MASK_BIAS, 0.0)
    mask.setflags(write=False)
    return mask


def window_geometry(h: int, w: int, window: int, shift: bool) -> tuple[int, int, int, int]:
    wh, ww = min(window, h), min(window, w)
    if h % wh or w % ww:
        raise ValueError(f"window {window} does not divide token grid {h}x{w}")
    sh = wh // 2 if shift and wh < h else 0
    sw = ww // 2 if shift and ww < w else 0
    return wh, ww, sh, sw


def _window_msa_hwc(x: Tensor, attn: WindowAttention, window: int, shift: bool, return_attn: bool = False):
    h, w, c = x.shape
    wh, ww, sh, sw = window_geometry(h, w, window, shift)
    heads = attn.heads
    hd = c // heads
    nw, tok = (h // wh) * (w // ww), wh * ww
    if sh or sw:
        x = T.roll(x, (-sh, -sw), (0, 1))
    win = x.reshape(h // wh, wh, w // ww, ww, c).transpose(0, 2, 1, 3, 4).reshape(nw, tok, c)
    qkv = attn.qkv(win).reshape(nw, tok, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ k.transpose(0, 1, 3, 2)) * (hd**-0.5)
    if sh or sw:
        logits = logits + shift_mask(h, w, wh, ww, sh, sw)[:, None]
    weights = T.softmax(logits, axis=-1)
    out = (weights @ v).transpose(0, 2, 1, 3).reshape(nw, tok, c)
    out = attn.proj(out)
    out = out.reshape(h // wh, w // ww, wh, ww, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)
    if sh or sw:
        out = T.roll(out, (sh, sw), (0, 1))
    return (out, weights) if return_attn else out


def window_msa(grid: Tensor, attn: WindowAttention, window: int, shift: bool) -> Tensor:
    """Multi-head self-attention inside (optionally cyclically shifted) windows of a ``C×H×W`` grid."""
    x = T.as_tensor(grid).transpose(1, 2, 0)
    return _window_msa_hwc(x, attn, window, shift).transpose(2, 0, 1)


def _layer_hwc(z: Tensor, layer: TransformerLayer, window: int) -> Tensor:
    n1 = T.layer_norm(z, layer.norm1.gamma, layer.norm1.beta, layer.eps)
    z_hat = _window_msa_hwc(n1, layer.attn, window, layer.shift) + z
    n2 = T.layer_norm(z_hat, layer.norm2.gamma, layer.norm2.beta, layer.eps)
    return layer.fc2(T.gelu(layer.fc1(n2))) + z_hat


def transformer_layer(z_prev: Tensor, layer: TransformerLayer, window: int) -> Tensor:
    """Pre-norm layer: ``ẑ = MSA(LN(z)) + z``, ``z' = MLP(LN(ẑ)) + ẑ``."""
    x = T.as_tensor(z_prev).transpose(1, 2, 0)
    return _layer_hwc(x, layer, window).transpose(2, 0, 1)


def _merge_hwc(x: Tensor, merge: PatchMerge) -> Tensor:
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"patch merge needs even grid extents, got {h}x{w}")
    cat = T.concat([x[0::2, 0::2], x[1::2, 0::2], x[0::2, 1::2], x[1::2, 1::2]], axis=-1)
    return merge.reduction(T.layer_norm(cat, merge.norm.gamma, merge.norm.beta, merge.eps))


def patch_merge(grid: Tensor, merge: PatchMerge) -> Tensor:
    """2×2 neighbourhood concat, LayerNorm, linear 4C→2C; halves H and W."""
    x = T.as_tensor(grid).transpose(1, 2, 0)
    return _merge_hwc(x, merge).transpose(2, 0, 1)


def encode_transformer(image: Tensor, cfg: BranchConfig, branch: SwinBranch) -> FeaturePyramid:
    image = T.as_tensor(image)
    cfg.validate(image.shape[1], image.shape[2])
    z = _embed_hwc(image, branch.embed)
    levels = []
    for s, stage in enumerate(branch.stages):
        if s:
            z = _merge_hwc(z, branch.merges[s - 1])
        for layer in stage:
            z = _layer_hwc(z, layer, cfg.window_size)
        levels.append(z.transpose(2, 0, 1))
    return levels
