"""AdamW training on synthetic scenes with linear warm-up and cosine decay."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..conv_branch import ConvStemConfig
from ..decoder import DecoderConfig, LossConfig, silog_loss
from ..model import VARIANTS, DepthFormer, ModelConfig
from ..swin import BranchConfig
from .scenes import scene_set

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 1
    lr: float = 3e-4
    weight_decay: float = 0.01
    warmup: float = 0.3
    lam: float = 0.85
    alpha: float = 10.0
    seed: int = 0
    # scenes
    data_seed: int = 1000
    n_scenes: int = 8
    height: int = 64
    width: int = 64
    scene_d_min: float = 1.0
    scene_d_max: float = 10.0
    n_rects: int = 4
    # model
    variant: str = "+CB+HAHI"
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple[int, ...] = (2, 2, 2, 2)
    window_size: int = 4
    num_heads: tuple[int, ...] = (2, 4, 8, 16)
    out_levels: int = 4
    conv_channels: int = 64
    attn_heads: int = 8
    attn_points: int = 8
    decoder_channels: tuple[int, ...] = (128, 64, 32, 16)
    depth_min: float = 0.5
    depth_max: float = 12.0
    log_every: int = 100

    def __post_init__(self):
        if not 0 <= self.warmup < 1:
            raise ValueError(f"warm-up fraction must be in [0, 1), got {self.warmup}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {list(VARIANTS)}")

    def model_config(self) -> ModelConfig:
        return ModelConfig.variant(
            self.variant,
            branch=BranchConfig(
                patch_size=self.patch_size, embed_dim=self.embed_dim, depths=tuple(self.depths),
                window_size=self.window_size, num_heads=tuple(self.num_heads), out_levels=self.out_levels,
            ),
            conv=ConvStemConfig(channels=self.conv_channels),
            decoder=DecoderConfig(channels=tuple(self.decoder_channels), d_min=self.depth_min, d_max=self.depth_max),
            heads=self.attn_heads,
            points=self.attn_points,
        )

    def scene_kwargs(self) -> dict:
        return dict(height=self.height, width=self.width, d_min=self.scene_d_min,
                    d_max=self.scene_d_max, n_rects=self.n_rects)

    def train_scenes(self):
        return scene_set(range(self.data_seed, self.data_seed + self.n_scenes), **self.scene_kwargs())


def lr_at(step: int, total: int, base: float, warmup: float) -> float:
    """Linear ramp from 0 to ``base`` over ``warmup·total`` steps, then cosine to 0 at ``total``."""
    if total <= 0:
        return 0.0
    t_warm = warmup * total
    if step < t_warm:
        return base * step / t_warm
    if total == t_warm:
        return base
    frac = min((step - t_warm) / (total - t_warm), 1.0)
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.wd, self.betas, self.eps = weight_decay, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data *= 1 - lr * self.wd
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: DepthFormer
    curve: list[tuple[int, float, float]]
    iteration: int


def train(cfg: TrainConfig, out_path: str | Path | None = None, scenes=None) -> TrainResult:
    """Train and (when ``out_path`` is set) write the checkpoint plus ``<out>.loss.csv``.

    A non-finite loss saves the pre-step model and raises :class:`TrainingDiverged`.
    """
    from .checkpoint import save_checkpoint, write_loss_curve

    scenes = scenes if scenes is not None else cfg.train_scenes()
    model = DepthFormer(cfg.model_config(), seed=cfg.seed)
    opt = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    loss_cfg = LossConfig(lam=cfg.lam, alpha=cfg.alpha)
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    curve = []
    for it in range(cfg.iterations):
        lr = lr_at(it, cfg.iterations, cfg.lr, cfg.warmup)
        batch = []
        for _ in range(cfg.batch_size):
            if not order:
                order = rng.permutation(len(scenes)).tolist()
            batch.append(order.pop())
        model.zero_grad()
        total = 0.0
        for i in batch:
            image, depth = scenes[i]
            loss = silog_loss(model.predict(image), depth, loss_cfg) * (1.0 / len(batch))
            if not np.isfinite(loss.item()):
                if out_path is not None:
                    save_checkpoint(out_path, model, cfg, it)
                    write_loss_curve(Path(str(out_path) + ".loss.csv"), curve)
                raise TrainingDiverged(f"non-finite loss at iteration {it}; last good model saved")
            loss.backward()
            total += loss.item()
        opt.step(lr)
        curve.append((it, lr, total))
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d lr %.3e loss %.4f", it, lr, total)
    if out_path is not None:
        save_checkpoint(out_path, model, cfg, cfg.iterations)
        write_loss_curve(Path(str(out_path) + ".loss.csv"), curve)
    return TrainResult(model, curve, cfg.iterations)
