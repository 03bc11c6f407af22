"""Checkpoint evaluation and the four-variant ablation."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

from ..depthmap import DepthMap
from ..metrics import EvalConfig, MetricReport, align_to_gt, compute_metrics, mean_reports, range_binned_report
from ..model import VARIANTS
from ..tensor import no_grad
from .checkpoint import Checkpoint, build_model, load_checkpoint
from .io import format_table, write_report
from .scenes import scene_set
from .train import TrainConfig, train

log = logging.getLogger(__name__)


def predict_depth(model, image) -> DepthMap:
    """Half-resolution model output, bilinearly aligned by the caller."""
    with no_grad():
        return DepthMap.dense(model.predict(image, full_resolution=False).data)


def evaluate(
    model_or_ckpt,
    samples,
    eval_cfg: EvalConfig = EvalConfig(),
    binned: bool = False,
    bypass_gt: bool = False,
) -> list[tuple[str, MetricReport]]:
    """Per-image metrics averaged over ``samples``; one row per bin when ``binned``, ending in ``Overall``.

    ``bypass_gt`` scores each ground truth against itself (oracle prediction).
    """
    if isinstance(model_or_ckpt, (str, Path)):
        model_or_ckpt = load_checkpoint(model_or_ckpt)
    model = build_model(model_or_ckpt) if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    per_label: dict[str, list[MetricReport]] = {}
    for image, gt in samples:
        if bypass_gt:
            pred = gt
        else:
            pred = align_to_gt(predict_depth(model, image), gt.shape)
        if binned:
            rows = range_binned_report(pred, gt, eval_cfg)
        else:
            rows = [("Overall", compute_metrics(pred, gt, eval_cfg))]
        for label, rep in rows:
            per_label.setdefault(label, []).append(rep)
    if not per_label:
        raise ValueError("no samples to evaluate")
    labels = [lbl for lbl in per_label if lbl != "Overall"] + ["Overall"]
    return [(lbl, mean_reports(per_label[lbl])) for lbl in labels]


@dataclass
class AblationConfig:
    n_heldout: int = 32
    heldout_seed: int = 5000
    eval_max_depth: float = 80.0


def ablation(train_cfg: TrainConfig, abl: AblationConfig = AblationConfig(), out_dir=None) -> list[tuple[str, MetricReport]]:
    """Train every variant with ``train_cfg`` and evaluate each on the held-out scenes."""
    heldout = scene_set(range(abl.heldout_seed, abl.heldout_seed + abl.n_heldout), **train_cfg.scene_kwargs())
    if set(range(abl.heldout_seed, abl.heldout_seed + abl.n_heldout)) & set(
        range(train_cfg.data_seed, train_cfg.data_seed + train_cfg.n_scenes)
    ):
        raise ValueError("held-out scene seeds overlap the training seeds")
    eval_cfg = EvalConfig(max_depth=abl.eval_max_depth)
    rows = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for name in VARIANTS:
        cfg = dataclasses.replace(train_cfg, variant=name)
        ckpt_path = out_dir / f"{_slug(name)}.ckpt" if out_dir is not None else None
        log.info("ablation: training %s", name)
        model = train(cfg, ckpt_path).model
        (_, rep), = evaluate(model, heldout, eval_cfg)
        rows.append((name, rep))
    if out_dir is not None:
        write_report(out_dir / "ablation", rows)
    return rows


def _slug(name: str) -> str:
    return name.lstrip("+").replace("+", "_")


def ablation_table(rows) -> str:
    return format_table(rows)
