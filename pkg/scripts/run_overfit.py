#!/usr/bin/env python3
"""Train the desk model on its 8 scenes and report training-set metrics.

Writes reports/overfit.ckpt, its loss curve and reports/overfit.txt.
"""
import argparse
import logging
import os
import time
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from depthformer.decoder import LossConfig, silog_loss  # noqa: E402
from depthformer.harness.config import dump_config, load_config  # noqa: E402
from depthformer.harness.evaluate import evaluate  # noqa: E402
from depthformer.harness.io import write_report  # noqa: E402
from depthformer.harness.train import TrainConfig, train  # noqa: E402
from depthformer.tensor import no_grad  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "overfit.cfg")
    ap.add_argument("--out", default=ROOT / "reports" / "overfit")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(TrainConfig, args.config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = train(cfg, out.with_suffix(".ckpt"))
    secs = time.perf_counter() - t0
    rows = evaluate(res.model, cfg.train_scenes())
    write_report(out, rows)
    m = rows[-1][1]
    loss_cfg = LossConfig(lam=cfg.lam, alpha=cfg.alpha)
    with no_grad():
        losses = [silog_loss(res.model.predict(img), gt, loss_cfg).item() for img, gt in cfg.train_scenes()]
    print(dump_config(cfg), end="")
    print(f"train time {secs:.1f}s for {cfg.iterations} iterations")
    print(f"d1 {m.d1:.4f} abs_rel {m.abs_rel:.4f} rmse {m.rmse:.4f} train loss {sum(losses) / len(losses):.4f}")


if __name__ == "__main__":
    main()
