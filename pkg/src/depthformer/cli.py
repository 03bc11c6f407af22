"""Command-line entry point: ``depthformer <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness.checkpoint import build_model, load_checkpoint
from .harness.config import dump_config, load_config, parse_pairs
from .harness.evaluate import AblationConfig, ablation, evaluate
from .harness.geometry import unproject
from .harness.io import (
    format_table,
    ingest_depth_pair,
    load_scene_dir,
    read_depth,
    save_scene,
    write_depth,
    write_points,
    write_report,
)
from .harness.scenes import SceneSpec, gen_scene
from .harness.train import TrainConfig, train
from .metrics import EvalConfig, compute_metrics, range_binned_report


def _overrides(items) -> dict[str, str]:
    return parse_pairs(items or [])


def _emit(rows, out) -> None:
    sys.stdout.write(format_table(rows))
    if out:
        kv, table = write_report(out, rows)
        print(f"wrote {kv} and {table}")


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in range(args.seed, args.seed + args.count):
        spec = SceneSpec(seed=seed, height=args.height, width=args.width, d_min=args.d_min,
                         d_max=args.d_max, n_rects=args.n_rects)
        image, depth = gen_scene(spec)
        save_scene(out / f"scene_{seed:06d}.npz", image, depth)
        if args.pgm:
            write_depth(out / f"scene_{seed:06d}.pgm", depth)
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(TrainConfig, args.config, _overrides(args.set))
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return 0
    res = train(cfg, args.out)
    print(f"trained {res.iteration} iterations, final loss {res.curve[-1][2]:.4f}" if res.curve else "no iterations run")
    print(f"checkpoint: {args.out}")
    return 0


def _eval_config(args) -> EvalConfig:
    return load_config(EvalConfig, args.config, _overrides(args.set))


def cmd_eval(args) -> int:
    eval_cfg = _eval_config(args)
    if args.data:
        samples = load_scene_dir(args.data)
    else:
        ckpt_cfg = load_checkpoint(args.checkpoint).train_config()
        seeds = range(args.seed, args.seed + args.count)
        samples = [gen_scene(SceneSpec(seed=s, **ckpt_cfg.scene_kwargs())) for s in seeds]
    model = None if args.bypass_gt else build_model(load_checkpoint(args.checkpoint))
    rows = evaluate(model, samples, eval_cfg, binned=args.binned, bypass_gt=args.bypass_gt)
    _emit(rows, args.out)
    return 0


def cmd_metrics(args) -> int:
    eval_cfg = _eval_config(args)
    pred, gt = ingest_depth_pair(args.pred, args.gt)
    rows = range_binned_report(pred, gt, eval_cfg) if args.binned else [("Overall", compute_metrics(pred, gt, eval_cfg))]
    _emit(rows, args.out)
    return 0


def cmd_unproject(args) -> int:
    depth = read_depth(args.depth)
    pts = unproject(depth, args.fx, args.fy, args.cx, args.cy)
    write_points(args.out, pts)
    print(f"wrote {len(pts)} points to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite, summarize

    results = run_suite(instances=args.instances, seed=args.seed, max_entries=args.max_entries or None,
                        only=args.only or None)
    print(summarize(results))
    failed = sum(not r.report.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} instances passed")
    return 1 if failed else 0


def cmd_ablation(args) -> int:
    cfg = load_config(TrainConfig, args.config, _overrides(args.set))
    rows = ablation(cfg, AblationConfig(n_heldout=args.heldout), args.out)
    sys.stdout.write(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="depthformer", description="Desk-scale monocular depth network and harness.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="flat 'key = value' file")
        p.add_argument("-s", "--set", action="append", metavar="KEY=VALUE", help="override one config field")

    p = sub.add_parser("gen", help="emit synthetic scenes as .npz (and optional .pgm depth)")
    p.add_argument("out")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--d-min", type=float, default=1.0)
    p.add_argument("--d-max", type=float, default=10.0)
    p.add_argument("--n-rects", type=int, default=4)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on synthetic scenes and write a checkpoint")
    p.add_argument("out", nargs="?", default="model.ckpt")
    with_config(p)
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on scenes")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--data", help="directory of .npz scenes; default generates held-out scenes")
    p.add_argument("--seed", type=int, default=5000)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--binned", action="store_true", help="range-binned rows plus Overall")
    p.add_argument("--bypass-gt", action="store_true", help="score ground truth against itself")
    p.add_argument("--out", help="report stem")
    with_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="metrics for an external prediction/ground-truth pair")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--binned", action="store_true")
    p.add_argument("--out", help="report stem")
    with_config(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("unproject", help="depth raster + intrinsics to an 'X Y Z' point list")
    p.add_argument("depth")
    p.add_argument("out")
    for k in ("fx", "fy", "cx", "cy"):
        p.add_argument(f"--{k}", type=float, required=True)
    p.set_defaults(func=cmd_unproject)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-entries", type=int, default=24, help="probed entries per tensor; 0 probes all")
    p.add_argument("--only", nargs="*", help="case names")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablation", help="train and evaluate all four variants")
    p.add_argument("out", nargs="?", default="reports/ablation")
    p.add_argument("--heldout", type=int, default=32)
    with_config(p)
    p.set_defaults(func=cmd_ablation)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "eval" and not args.bypass_gt and not args.checkpoint:
        build_parser().error("eval needs a checkpoint unless --bypass-gt is given")
    if args.command == "eval" and args.bypass_gt and not args.data and not args.checkpoint:
        build_parser().error("eval --bypass-gt needs --data or a checkpoint")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
