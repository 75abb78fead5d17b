"""Cross-dataset method comparison: Wilcoxon signed-rank, Holm correction,
average ranks, cliques, and critical-difference diagrams as SVG.

The signed-rank test drops zero differences, ranks absolute differences with
average ranks for ties, and reports W = min(W+, W-).  For up to 20 non-zero
differences the two-sided p-value is exact (the full 2^n sign-assignment
distribution, computed by subset-sum convolution over the doubled ranks);
beyond that a normal approximation with tie and continuity corrections is
used.  Cliques are maximal rank-contiguous method spans whose pairwise
Holm-adjusted p-values all sit at or above alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import rank_average

__all__ = [
    "ScoreMatrix",
    "CdModel",
    "wilcoxon_signed_rank",
    "holm_correction",
    "average_ranks",
    "build_cd_model",
    "compute_cliques",
    "render_cd_svg",
    "read_score_matrix_csv",
    "write_score_matrix_csv",
]


@dataclass(frozen=True)
class ScoreMatrix:
    """methods x datasets performance values, higher is better."""

    methods: tuple[str, ...]
    datasets: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if len(self.methods) < 2:
            raise ValueError("need at least 2 methods to compare")
        if len(self.datasets) < 3:
            raise ValueError("need at least 3 datasets to compare")
        if vals.shape != (len(self.methods), len(self.datasets)):
            raise ValueError(f"values shape {vals.shape} != ({len(self.methods)}, {len(self.datasets)})")
        if not np.isfinite(vals).all():
            raise ValueError("score matrix has missing or non-finite entries")


@dataclass
class CdModel:
    methods: tuple[str, ...]
    avg_ranks: np.ndarray
    adjusted_p: np.ndarray  # symmetric matrix, diagonal = 1
    alpha: float = 0.10
    cliques: list[tuple[int, ...]] = field(default_factory=list)


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided paired signed-rank test; returns (W, p)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    d = x - y
    d = d[d != 0.0]
    if len(d) == 0:
        raise ValueError("methods identical on every dataset (all differences zero)")
    n = len(d)
    if n < 3:
        raise ValueError(f"need at least 3 non-zero differences, got {n}")
    ranks = rank_average(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= 20:
        p = _exact_two_sided_p(ranks, w)
    else:
        p = _normal_two_sided_p(ranks, w, n)
    return w, p


def _exact_two_sided_p(ranks: np.ndarray, w: float) -> float:
    # doubled ranks are integers even when ties produce half-ranks
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    dist = np.zeros(total + 1, dtype=np.int64)
    dist[0] = 1
    for r in r2:
        dist[r:] = dist[r:] + dist[:-r]
    w2 = int(round(2.0 * w))
    count_le = int(dist[: w2 + 1].sum())
    return min(1.0, 2.0 * count_le / 2.0 ** len(r2))


def _normal_two_sided_p(ranks: np.ndarray, w: float, n: int) -> float:
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(ranks, return_counts=True)
    var -= float(np.sum(counts.astype(np.float64) ** 3 - counts)) / 48.0
    if var <= 0:
        raise ValueError("degenerate variance in normal approximation (all ties)")
    z = (w - mu + 0.5) / math.sqrt(var)  # w <= mu, continuity correction toward the mean
    return min(1.0, 2.0 * 0.5 * math.erfc(-z / math.sqrt(2.0)))


def holm_correction(pvals) -> np.ndarray:
    """Step-down Holm adjustment, returned in the original order, clipped at 1."""
    p = np.asarray(pvals, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for i, idx in enumerate(order):
        running = max(running, (m - i) * p[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


def average_ranks(matrix: ScoreMatrix) -> np.ndarray:
    """Per-dataset ranks (1 = best, ties averaged), averaged across datasets."""
    ranks = np.stack([rank_average(-matrix.values[:, j]) for j in range(len(matrix.datasets))])
    return ranks.mean(axis=0)


def build_cd_model(matrix: ScoreMatrix, alpha: float = 0.10) -> CdModel:
    """Pairwise Wilcoxon + Holm over all method pairs, ranks, and cliques."""
    k = len(matrix.methods)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    raw = []
    for i, j in pairs:
        _, p = wilcoxon_signed_rank(matrix.values[i], matrix.values[j])
        raw.append(p)
    adj = holm_correction(raw) if pairs else np.empty(0)
    pmat = np.ones((k, k))
    for (i, j), p in zip(pairs, adj):
        pmat[i, j] = pmat[j, i] = p
    model = CdModel(methods=matrix.methods, avg_ranks=average_ranks(matrix), adjusted_p=pmat, alpha=alpha)
    model.cliques = compute_cliques(model)
    return model


def compute_cliques(model: CdModel) -> list[tuple[int, ...]]:
    """Maximal contiguous spans (in rank order) of pairwise-indistinguishable methods."""
    order = np.argsort(model.avg_ranks, kind="stable")
    k = len(order)
    spans = []
    best_end = -1
    for start in range(k):
        end = start
        while end + 1 < k and all(
            model.adjusted_p[order[a], order[end + 1]] >= model.alpha for a in range(start, end + 1)
        ):
            end += 1
        if end > start and end > best_end:  # size >= 2, not nested in a previous span
            spans.append(tuple(int(order[i]) for i in range(start, end + 1)))
            best_end = end
    return spans


def render_cd_svg(model: CdModel, path: str | None = None) -> str:
    """Critical-difference diagram: rank axis, method markers, clique bars.

    Output is deterministic (fixed precision and element order) so files from
    identical models are byte-identical.  Labels alternate left/right in rank
    order; every clique is one thick horizontal bar under the axis.
    """
    k = len(model.methods)
    width, x0, x1 = 640.0, 80.0, 560.0
    axis_y = 50.0

    def x_at(rank: float) -> float:
        return x0 + (rank - 1.0) / max(k - 1, 1) * (x1 - x0)

    order = np.argsort(model.avg_ranks, kind="stable")
    clique_rows = len(model.cliques)
    label_rows = (k + 1) // 2
    height = axis_y + 20.0 + 16.0 * clique_rows + 22.0 * label_rows + 30.0

    e = []
    e.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="Helvetica, Arial, sans-serif" font-size="12">'
    )
    e.append(f'<line x1="{x0:.2f}" y1="{axis_y:.2f}" x2="{x1:.2f}" y2="{axis_y:.2f}" stroke="black" stroke-width="1.5"/>')
    for r in range(1, k + 1):
        xt = x_at(r)
        e.append(f'<line x1="{xt:.2f}" y1="{axis_y - 5:.2f}" x2="{xt:.2f}" y2="{axis_y:.2f}" stroke="black" stroke-width="1"/>')
        e.append(f'<text x="{xt:.2f}" y="{axis_y - 10:.2f}" text-anchor="middle">{r}</text>')

    bar_y = axis_y + 14.0
    for clique in model.cliques:
        lo = min(model.avg_ranks[i] for i in clique)
        hi = max(model.avg_ranks[i] for i in clique)
        e.append(
            f'<line class="clique" x1="{x_at(lo) - 4:.2f}" y1="{bar_y:.2f}" '
            f'x2="{x_at(hi) + 4:.2f}" y2="{bar_y:.2f}" stroke="#b22222" stroke-width="4"/>'
        )
        bar_y += 16.0

    label_top = bar_y + 14.0
    for pos, idx in enumerate(order):
        rank = model.avg_ranks[idx]
        xm = x_at(rank)
        left = pos % 2 == 0
        lx = x0 - 12.0 if left else x1 + 12.0
        ly = label_top + 22.0 * (pos // 2)
        anchor = "end" if left else "start"
        e.append(f'<circle cx="{xm:.2f}" cy="{axis_y:.2f}" r="3" fill="black"/>')
        e.append(
            f'<polyline points="{xm:.2f},{axis_y:.2f} {xm:.2f},{ly - 4:.2f} {lx:.2f},{ly - 4:.2f}" '
            f'fill="none" stroke="black" stroke-width="0.8"/>'
        )
        e.append(
            f'<text x="{lx:.2f}" y="{ly:.2f}" text-anchor="{anchor}">'
            f"{_esc(model.methods[idx])} ({rank:.2f})</text>"
        )
    e.append("</svg>")
    svg = "\n".join(e) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return svg


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_score_matrix_csv(matrix: ScoreMatrix, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method," + ",".join(matrix.datasets) + "\n")
        for i, m in enumerate(matrix.methods):
            fh.write(m + "," + ",".join(f"{v:.10g}" for v in matrix.values[i]) + "\n")


def read_score_matrix_csv(path: str) -> ScoreMatrix:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"empty score matrix file {path!r}")
    header = lines[0].split(",")
    if header[0] != "method":
        raise ValueError("first CSV column must be 'method'")
    datasets = tuple(header[1:])
    methods, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        methods.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    return ScoreMatrix(methods=tuple(methods), datasets=datasets, values=np.array(rows))
