"""Depth evaluation: threshold accuracies, error metrics, crops, range bins.

Sums use ``math.fsum`` so results do not depend on summation order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .depthmap import DepthMap
from .tensor import resize_matrix

# Garg crop fractions: 151/370, 367/370 rows and 44/1224, 1180/1224 cols at the
# KITTI reference size, truncated to 8 decimals in common evaluation code.
GARG_CROP = (0.40810811, 0.99189189, 0.03594771, 0.96405229)
# Eigen NYU centre crop at 480×640 (half-open rows 45:471, cols 41:601)
EIGEN_CROP = (45, 471, 41, 601)
EIGEN_REF_SIZE = (480, 640)

KITTI_BINS = ((0.0, 20.0), (20.0, 60.0), (60.0, 80.0))

METRIC_NAMES = (
    "d1", "d2", "d3", "abs_rel", "sq_rel", "rmse", "rmse_log", "log10",
    "silog", "irmse", "abs_error_rel", "sq_error_rel",
)


@dataclass
class MetricReport:
    d1: float
    d2: float
    d3: float
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    log10: float
    silog: float
    irmse: float  # 1/km
    abs_error_rel: float  # percent
    sq_error_rel: float  # percent
    n_pixels: int

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


@dataclass
class EvalConfig:
    crop: str = "none"
    min_depth: float = 1e-3
    max_depth: float = 80.0
    bins: tuple[tuple[float, float], ...] = field(default=KITTI_BINS)

    def __post_init__(self):
        if self.crop not in ("none", "garg", "eigen_center"):
            raise ValueError(f"unknown crop kind {self.crop!r}")
        bins = [tuple(map(float, b)) for b in self.bins]
        for lo, hi in bins:
            if not lo < hi:
                raise ValueError(f"empty bin ({lo}, {hi}]")
        for (_, hi), (lo, _) in zip(bins, bins[1:]):
            if lo < hi:
                raise ValueError("range bins must be ordered and non-overlapping")
        self.bins = tuple(bins)


def crop_mask(height: int, width: int, kind: str) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    if kind == "none":
        mask[:] = True
    elif kind == "garg":
        t, b, l, r = GARG_CROP
        mask[round(t * height) : round(b * height), round(l * width) : round(r * width)] = True
    elif kind == "eigen_center":
        t, b, l, r = EIGEN_CROP
        sh, sw = height / EIGEN_REF_SIZE[0], width / EIGEN_REF_SIZE[1]
        mask[round(t * sh) : round(b * sh), round(l * sw) : round(r * sw)] = True
    else:
        raise ValueError(f"unknown crop kind {kind!r}")
    return mask


def eval_mask(gt: DepthMap, cfg: EvalConfig) -> np.ndarray:
    g = gt.array()
    with np.errstate(invalid="ignore"):
        in_range = (g > cfg.min_depth) & (g <= cfg.max_depth)
    return gt.valid & crop_mask(*g.shape, cfg.crop) & in_range


def _mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / x.size


def metrics_from_pixels(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    """Metrics over 1-D arrays of matched positive depths."""
    if pred.size == 0:
        raise ValueError("no pixels to evaluate")
    ratio = np.maximum(pred / gt, gt / pred)
    n = pred.size
    diff = pred - gt
    h = np.log(pred) - np.log(gt)
    abs_rel = _mean(np.abs(diff) / gt)
    sq_rel = _mean(diff * diff / gt)
    mh = _mean(h)
    silog_rad = max(_mean(h * h) - mh * mh, 0.0)
    inv = 1000.0 / pred - 1000.0 / gt
    return MetricReport(
        d1=int(np.count_nonzero(ratio < 1.25)) / n,
        d2=int(np.count_nonzero(ratio < 1.25**2)) / n,
        d3=int(np.count_nonzero(ratio < 1.25**3)) / n,
        abs_rel=abs_rel,
        sq_rel=sq_rel,
        rmse=math.sqrt(_mean(diff * diff)),
        rmse_log=math.sqrt(_mean(h * h)),
        log10=_mean(np.abs(np.log10(pred) - np.log10(gt))),
        silog=100.0 * math.sqrt(silog_rad),
        irmse=math.sqrt(_mean(inv * inv)),
        abs_error_rel=100.0 * abs_rel,
        sq_error_rel=100.0 * sq_rel,
        n_pixels=n,
    )


def compute_metrics(pred: DepthMap, gt: DepthMap, cfg: EvalConfig = EvalConfig(), extra_mask=None) -> MetricReport:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ; align first")
    mask = eval_mask(gt, cfg) & pred.valid
    if extra_mask is not None:
        mask &= extra_mask
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    p = pred.array()[mask]
    if np.any(p <= 0):
        raise ValueError("prediction has non-positive depth inside the evaluation mask")
    return metrics_from_pixels(p, gt.array()[mask])


def bin_label(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"


def range_binned_report(pred: DepthMap, gt: DepthMap, cfg: EvalConfig = EvalConfig()) -> list[tuple[str, MetricReport]]:
    """One report per ``(lo, hi]`` bin that has pixels, then ``Overall``."""
    g = gt.array()
    rows = []
    for lo, hi in cfg.bins:
        with np.errstate(invalid="ignore"):
            sel = (g > lo) & (g <= hi)
        try:
            rows.append((bin_label(lo, hi), compute_metrics(pred, gt, cfg, extra_mask=sel)))
        except ValueError as err:
            if "empty" not in str(err):
                raise
    rows.append(("Overall", compute_metrics(pred, gt, cfg)))
    return rows


def align_to_gt(pred: DepthMap, gt_shape) -> DepthMap:
    """Bilinear upsample (half-pixel centres, clamped edges) to the ground-truth size."""
    h, w = pred.shape
    th, tw = gt_shape
    if h > th or w > tw:
        raise ValueError(f"prediction {pred.shape} is larger than ground truth {tuple(gt_shape)}")
    if (h, w) == (th, tw):
        return DepthMap(pred.array().copy(), np.ones((h, w), dtype=bool))
    out = resize_matrix(h, th) @ pred.array() @ resize_matrix(w, tw).T
    return DepthMap(out, np.ones((th, tw), dtype=bool))


def mean_reports(reports: list[MetricReport]) -> MetricReport:
    """Per-image mean of each metric; pixel counts are summed."""
    if not reports:
        raise ValueError("no reports to aggregate")
    vals = {k: math.fsum(getattr(r, k) for r in reports) / len(reports) for k in METRIC_NAMES}
    return MetricReport(**vals, n_pixels=sum(r.n_pixels for r in reports))


def report_fields() -> list[str]:
    return [f.name for f in fields(MetricReport)]


def as_dict(report: MetricReport) -> dict:
    return asdict(report)
