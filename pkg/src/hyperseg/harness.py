"""Experiment orchestration: run matrices, persisted records, comparisons.

Results are appended to a JSON-lines file, one record per finished run,
written only after evaluation completes (a crashed run leaves no partial
record).  ``run_id`` is a pure hash of the run-defining configuration plus
seed, so re-running is idempotent: existing records are skipped unless
forced.  Timestamps and wall times are carried in the record but excluded
from the hash and from byte-level determinism comparisons.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .model import load_checkpoint, save_checkpoint
from .synth import DatasetCounts, default_categories, load_category, load_manifest, write_dataset
from .rng import Rng
from .train import LOSS_VARIANTS, SUPERVISION_MODES, evaluate_category, train_run

__all__ = [
    "HarnessConfig",
    "RunRecord",
    "run_id_for",
    "generate_dataset",
    "execute_run_matrix",
    "load_records",
    "append_record",
    "compare_records",
    "CompareResult",
]


@dataclass(frozen=True)
class HarnessConfig:
    dataset_root: str = "data"
    out_dir: str = "runs"
    categories: int = 10
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    epochs: int = 50
    batch_size: int = 16
    loss_variants: tuple[str, ...] = ("baseline", "proposed")
    supervision: str = "unsup"
    alpha: float = 0.10
    image_size: int = 64
    train_count: int = 16
    test_normal_count: int = 8
    test_anomalous_count: int = 8
    dataset_seed: int = 7
    workers: int = 2

    def __post_init__(self):
        if not 1 <= self.categories <= 10:
            raise ValueError("categories must be between 1 and 10")
        if self.supervision not in SUPERVISION_MODES:
            raise ValueError(f"supervision must be one of {SUPERVISION_MODES}")
        for v in self.loss_variants:
            if v not in LOSS_VARIANTS:
                raise ValueError(f"unknown loss variant {v!r}")

    @classmethod
    def from_json(cls, text: str) -> "HarnessConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("seeds", "loss_variants"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    run_id: str
    category: str
    seed: int
    loss_variant: str
    supervision: str
    epochs: int
    pixel_auroc: float
    pixel_ap: float
    wall_time_s: float
    config_digest: str
    created_at: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def run_id_for(cfg: HarnessConfig, category: str, seed: int, variant: str) -> str:
    ident = json.dumps(
        {
            "category": category,
            "seed": seed,
            "loss_variant": variant,
            "supervision": cfg.supervision,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "dataset_seed": cfg.dataset_seed,
            "image_size": cfg.image_size,
            "train_count": cfg.train_count,
        },
        sort_keys=True,
    )
    return hashlib.sha256(ident.encode()).hexdigest()[:16]


def generate_dataset(cfg: HarnessConfig, force: bool = False) -> dict:
    root = cfg.dataset_root
    if os.path.exists(root) and os.listdir(root):
        if not force:
            raise ValueError(f"dataset directory {root!r} is not empty (use --force to overwrite)")
        import shutil

        shutil.rmtree(root)
    specs = default_categories(cfg.image_size)[: cfg.categories]
    counts = DatasetCounts(cfg.train_count, cfg.test_normal_count, cfg.test_anomalous_count)
    return write_dataset(root, specs, Rng(cfg.dataset_seed), counts)


def results_path(cfg: HarnessConfig) -> str:
    return os.path.join(cfg.out_dir, "results.jsonl")


def load_records(path: str) -> list[RunRecord]:
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_json(line) for line in fh if line.strip()]


def append_record(path: str, record: RunRecord) -> None:
    """Append one JSON line under an exclusive lock."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        try:
            import fcntl

            fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        except ImportError:  # non-posix; single-writer semantics still hold
            pass
        fh.write(record.to_json() + "\n")
        fh.flush()


def _execute_one(args: tuple) -> RunRecord:
    cfg_json, category, seed, variant = args
    cfg = HarnessConfig.from_json(cfg_json)
    manifest = load_manifest(cfg.dataset_root)
    data = load_category(cfg.dataset_root, manifest, category)
    started = time.time()
    result = train_run(
        data,
        loss_variant=variant,
        supervision=cfg.supervision,
        seed=seed,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
    )
    auroc, ap, _ = evaluate_category(result.params, data, exclude=result.held_in, out_size=cfg.image_size)
    rid = run_id_for(cfg, category, seed, variant)
    os.makedirs(os.path.join(cfg.out_dir, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(cfg.out_dir, "logs"), exist_ok=True)
    save_checkpoint(os.path.join(cfg.out_dir, "checkpoints", f"{rid}.ckpt"), result.params)
    with open(os.path.join(cfg.out_dir, "logs", f"{rid}.jsonl"), "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return RunRecord(
        run_id=rid,
        category=category,
        seed=seed,
        loss_variant=variant,
        supervision=cfg.supervision,
        epochs=cfg.epochs,
        pixel_auroc=auroc,
        pixel_ap=ap,
        wall_time_s=time.time() - started,
        config_digest=cfg.digest,
        created_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    )


def execute_run_matrix(cfg: HarnessConfig, force: bool = False, progress=None) -> list[RunRecord]:
    """Train and evaluate every (category, seed, variant); returns new records."""
    manifest = load_manifest(cfg.dataset_root)
    categories = [c["name"] for c in manifest["categories"]]
    path = results_path(cfg)
    existing = {r.run_id for r in load_records(path)}
    todo = []
    for category in categories:
        for seed in cfg.seeds:
            for variant in cfg.loss_variants:
                rid = run_id_for(cfg, category, seed, variant)
                if force or rid not in existing:
                    todo.append((cfg.to_json(), category, seed, variant))
    new_records: list[RunRecord] = []
    if not todo:
        return new_records
    if cfg.workers <= 1:
        iterator = map(_execute_one, todo)
        for rec in iterator:
            append_record(path, rec)
            new_records.append(rec)
            if progress:
                progress(rec)
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for rec in pool.map(_execute_one, todo):
                append_record(path, rec)
                new_records.append(rec)
                if progress:
                    progress(rec)
    return new_records


@dataclass
class CompareResult:
    matrix: stats.ScoreMatrix
    model: stats.CdModel
    raw_p: dict[tuple[str, str], float]
    adjusted_p: dict[tuple[str, str], float]
    per_category: dict[str, dict[str, tuple[float, float]]]  # method -> category -> (mean, std)
    svg_path: str | None = None
    csv_path: str | None = None


def compare_records(
    records: list[RunRecord],
    metric: str = "ap",
    alpha: float = 0.10,
    out_dir: str | None = None,
) -> CompareResult:
    """Seed-mean per category per method, then Wilcoxon + Holm + ranks + CD diagram."""
    if metric not in ("auroc", "ap"):
        raise ValueError(f"metric must be 'auroc' or 'ap', got {metric!r}")
    getter = (lambda r: r.pixel_auroc) if metric == "auroc" else (lambda r: r.pixel_ap)

    by_method: dict[str, dict[str, list[float]]] = {}
    for r in records:
        method = f"{r.loss_variant}-{r.supervision}"
        by_method.setdefault(method, {}).setdefault(r.category, []).append(getter(r))
    if len(by_method) < 2:
        raise ValueError(f"need records from at least 2 methods, got {sorted(by_method)}")

    methods = tuple(sorted(by_method))
    cat_sets = {m: set(c) for m, c in by_method.items()}
    common = set.intersection(*cat_sets.values())
    union = set.union(*cat_sets.values())
    if union - common:
        detail = {m: sorted(union - s) for m, s in cat_sets.items() if union - s}
        raise ValueError(f"methods disagree on categories; missing per method: {detail}")
    categories = tuple(sorted(common))
    if len(categories) < 3:
        raise ValueError(f"need at least 3 common categories, got {len(categories)}")

    values = np.array([[float(np.mean(by_method[m][c])) for c in categories] for m in methods])
    matrix = stats.ScoreMatrix(methods=methods, datasets=categories, values=values)
    model = stats.build_cd_model(matrix, alpha=alpha)

    raw_p, adj_p = {}, {}
    pairs = [(i, j) for i in range(len(methods)) for j in range(i + 1, len(methods))]
    raws = []
    for i, j in pairs:
        _, p = stats.wilcoxon_signed_rank(values[i], values[j])
        raws.append(p)
    adjusted = stats.holm_correction(raws)
    for (i, j), p_raw, p_adj in zip(pairs, raws, adjusted):
        raw_p[(methods[i], methods[j])] = float(p_raw)
        adj_p[(methods[i], methods[j])] = float(p_adj)

    per_category = {
        m: {c: (float(np.mean(by_method[m][c])), float(np.std(by_method[m][c]))) for c in categories}
        for m in methods
    }

    svg_path = csv_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        svg_path = os.path.join(out_dir, f"cd_{metric}.svg")
        stats.render_cd_svg(model, svg_path)
        csv_path = os.path.join(out_dir, f"compare_{metric}.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("method,category,mean_metric,std_metric\n")
            for m in methods:
                for c in categories:
                    mean, std = per_category[m][c]
                    fh.write(f"{m},{c},{mean:.6f},{std:.6f}\n")
    return CompareResult(
        matrix=matrix,
        model=model,
        raw_p=raw_p,
        adjusted_p=adj_p,
        per_category=per_category,
        svg_path=svg_path,
        csv_path=csv_path,
    )


def format_comparison_table(result: CompareResult, metric: str) -> str:
    """Per-category table plus cross-category mean (std), one column per method."""
    methods = result.matrix.methods
    categories = result.matrix.datasets
    col = max(12, *(len(m) + 2 for m in methods))
    lines = [f"{'category':<14}" + "".join(f"{m:>{col}}" for m in methods)]
    for ci, c in enumerate(categories):
        row = f"{c:<14}"
        for mi in range(len(methods)):
            row += f"{result.matrix.values[mi, ci]:>{col}.4f}"
        lines.append(row)
    means = result.matrix.values.mean(axis=1)
    stds = result.matrix.values.std(axis=1)
    row = f"{'all':<14}"
    for mi in range(len(methods)):
        row += f"{means[mi]:>{col - 8}.4f} ({stds[mi]:.2f})"
    lines.append(row)
    lines.append("")
    lines.append(f"average ranks ({metric}): " + ", ".join(
        f"{m}={r:.3f}" for m, r in zip(methods, result.model.avg_ranks)
    ))
    for (a, b), p in result.raw_p.items():
        lines.append(
            f"wilcoxon {a} vs {b}: p={p:.6g} (holm-adjusted {result.adjusted_p[(a, b)]:.6g})"
        )
    cliques = [tuple(methods[i] for i in c) for c in result.model.cliques]
    lines.append(f"cliques at alpha={result.model.alpha:g}: {cliques if cliques else 'none'}")
    return "\n".join(lines)
