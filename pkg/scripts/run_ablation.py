#!/usr/bin/env python3
"""Train all four variants with the overfit config and archive the held-out table in reports/ablation/."""
import os
import sys
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from depthformer.cli import main  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    argv = ["-v", "ablation", str(ROOT / "reports" / "ablation"), "--config", str(ROOT / "configs" / "overfit.cfg")]
    raise SystemExit(main(argv + sys.argv[1:]))
