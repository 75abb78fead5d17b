"""Command-line entry point.

Subcommands: gen-data, train, eval, compare, loss-check.  Exit codes:
0 success, 1 validation error, 2 numerical failure (non-finite loss or a
failed gradient check).  The default output root can be set through the
HYPERSEG_OUT environment variable.
"""

from __future__ import annotations

import os

# Keep BLAS single-threaded unless the user says otherwise: run-matrix
# parallelism comes from worker processes, and oversubscribed BLAS pools
# slow the small matmuls down.  Must happen before numpy loads.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import harness
from .gradcheck import run_all
from .heatmap import heatmap_pgm
from .model import load_checkpoint
from .ops import NumericalError
from .synth import load_category, load_manifest
from .train import evaluate_category, select_semi_proxies
from .rng import Rng

DEFAULT_OUT = os.environ.get("HYPERSEG_OUT", "runs")


def _load_config(args) -> harness.HarnessConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            base = json.loads(fh.read())
        known = {f.name for f in dataclasses.fields(harness.HarnessConfig)}
        unknown = set(base) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    overrides = {
        "dataset_root": getattr(args, "data", None),
        "out_dir": getattr(args, "out", None),
        "categories": getattr(args, "categories", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "supervision": getattr(args, "supervision", None),
        "alpha": getattr(args, "alpha", None),
        "dataset_seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
        "image_size": getattr(args, "image_size", None),
        "train_count": getattr(args, "train_count", None),
        "test_normal_count": getattr(args, "test_normal_count", None),
        "test_anomalous_count": getattr(args, "test_anomalous_count", None),
    }
    if getattr(args, "seeds", None):
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "loss", None):
        overrides["loss_variants"] = tuple(args.loss.split(","))
    base.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("seeds", "loss_variants"):
        if key in base:
            base[key] = tuple(base[key])
    return harness.HarnessConfig(**base)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    manifest = harness.generate_dataset(cfg, force=args.force)
    n = len(manifest["categories"])
    files = sum(len(c["files"]) for c in manifest["categories"])
    print(f"wrote {n} categories ({files} images) under {cfg.dataset_root}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    done = {r.run_id for r in harness.load_records(harness.results_path(cfg))}

    def progress(rec):
        print(
            f"[{rec.category} seed={rec.seed} {rec.loss_variant}-{rec.supervision}] "
            f"auroc={rec.pixel_auroc:.4f} ap={rec.pixel_ap:.4f} ({rec.wall_time_s:.1f}s)",
            flush=True,
        )

    new = harness.execute_run_matrix(cfg, force=args.force, progress=progress)
    skipped = len(done) if not args.force else 0
    print(f"{len(new)} runs executed, results in {harness.results_path(cfg)}"
          + (f" ({skipped} already present)" if skipped else ""))
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    data = load_category(args.data, manifest, args.category)
    exclude: tuple[int, ...] = ()
    if args.supervision == "semi":
        if args.seed is None:
            raise ValueError("--seed is required to reproduce semi-supervised held-in exclusion")
        exclude = select_semi_proxies(data, Rng(args.seed))
    auroc, ap, maps = evaluate_category(params, data, exclude=exclude)
    print(f"{args.category}: pixel_auroc={auroc:.6f} pixel_ap={ap:.6f}")
    if args.dump_heatmaps:
        out = args.out or DEFAULT_OUT
        os.makedirs(out, exist_ok=True)
        keep = [i for i in range(len(data.test_images)) if i not in set(exclude)]
        for pos, idx in enumerate(keep):
            path = os.path.join(out, f"{args.category}_test_{idx:03d}.pgm")
            with open(path, "wb") as fh:
                fh.write(heatmap_pgm(maps[pos]))
        print(f"wrote {len(keep)} heatmaps to {out}")
    return 0


def cmd_compare(args) -> int:
    records = []
    for path in args.results:
        records.extend(harness.load_records(path))
    if not records:
        raise ValueError(f"no records found in {args.results}")
    result = harness.compare_records(records, metric=args.metric, alpha=args.alpha, out_dir=args.out or DEFAULT_OUT)
    print(harness.format_comparison_table(result, args.metric))
    if result.svg_path:
        print(f"CD diagram: {result.svg_path}")
        print(f"CSV table:  {result.csv_path}")
    return 0


def cmd_loss_check(args) -> int:
    results = run_all(seed=args.seed, cases=args.cases, e2e_cases=args.cases)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: max rel err {r.max_rel_error:.3e} (tol {r.tolerance:.0e}, {r.cases} cases)")
        failed |= not r.passed
    if failed:
        raise NumericalError("gradient check failed")
    print("all gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hyperseg", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file with HarnessConfig fields")
        p.add_argument("--data", help="dataset root directory")
        p.add_argument("--out", help=f"output directory (default {DEFAULT_OUT})", default=None)
        p.add_argument("--force", action="store_true")

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    add_common(g)
    g.add_argument("--categories", type=int, help="number of categories (1-10)")
    g.add_argument("--seed", type=int, help="dataset seed")
    g.add_argument("--image-size", dest="image_size", type=int)
    g.add_argument("--train-count", dest="train_count", type=int)
    g.add_argument("--test-normal-count", dest="test_normal_count", type=int)
    g.add_argument("--test-anomalous-count", dest="test_anomalous_count", type=int)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="execute the category x seed x variant run matrix")
    add_common(t)
    t.add_argument("--seeds", help="comma-separated run seeds, e.g. 0,1,2")
    t.add_argument("--seed", type=int, help="dataset seed (must match gen-data)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--loss", help="comma-separated loss variants: baseline,proposed")
    t.add_argument("--supervision", choices=("unsup", "semi"))
    t.add_argument("--categories", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--image-size", dest="image_size", type=int)
    t.add_argument("--train-count", dest="train_count", type=int)
    t.add_argument("--test-normal-count", dest="test_normal_count", type=int)
    t.add_argument("--test-anomalous-count", dest="test_anomalous_count", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one category")
    e.add_argument("checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--category", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--dump-heatmaps", action="store_true")
    e.add_argument("--supervision", choices=("unsup", "semi"), default="unsup")
    e.add_argument("--seed", type=int, help="run seed (needed for semi exclusion)")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("compare", help="statistical comparison from results files")
    c.add_argument("results", nargs="+", help="results.jsonl file(s)")
    c.add_argument("--metric", choices=("auroc", "ap"), default="ap")
    c.add_argument("--alpha", type=float, default=0.10)
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_compare)

    lc = sub.add_parser("loss-check", help="run the full gradient-check suite")
    lc.add_argument("--seed", type=int, default=0)
    lc.add_argument("--cases", type=int, default=50)
    lc.set_defaults(fn=cmd_loss_check)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
