#!/usr/bin/env python3
"""Finite-difference check of every differentiable op plus the end-to-end tiny model."""
import os
import sys

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from depthformer.cli import main  # noqa: E402

if __name__ == "__main__":
    raise SystemExit(main(["gradcheck", *sys.argv[1:]]))
