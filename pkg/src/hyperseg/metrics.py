"""Pixel-pooled ranking metrics: AUROC and average precision.

Both run in O(N log N) off a single sort and handle ties exactly: AUROC via
the rank-sum (Mann-Whitney) form with average ranks, AP as the step-wise sum
of precision times recall increments over descending distinct thresholds
(no interpolation).  Scores for a whole category are pooled into one flat
array before either metric is applied.
"""

from __future__ import annotations

import numpy as np

__all__ = ["rank_average", "pixel_auroc", "pixel_ap", "category_scores"]


def rank_average(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    v = np.asarray(values)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    new_group = np.r_[True, sv[1:] != sv[:-1]]
    group = np.cumsum(new_group) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0  # (start + end) / 2 with 1-based ranks
    ranks = np.empty(len(v))
    ranks[order] = avg[group]
    return ranks


def _flat_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.shape}) and labels ({y.shape}) differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    return s, y.astype(bool)


def pixel_auroc(scores, labels) -> float:
    """Area under the ROC curve; ties contribute 1/2 (trapezoidal handling)."""
    s, y = _flat_pair(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"AUROC needs both classes, got {n_pos} positives / {n_neg} negatives")
    ranks = rank_average(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pixel_ap(scores, labels) -> float:
    """Average precision: sum of (R_k - R_{k-1}) * P_k over distinct thresholds."""
    s, y = _flat_pair(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AP needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    tps = np.cumsum(y_sorted)
    ks = np.arange(1, len(s_sorted) + 1)
    cut = np.r_[s_sorted[1:] != s_sorted[:-1], True]  # last index of each tie group
    precision = tps[cut] / ks[cut]
    recall = tps[cut] / n_pos
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


def category_scores(score_maps, masks) -> tuple[float, float]:
    """Pool every test pixel of a category and compute (AUROC, AP)."""
    s = np.asarray(score_maps, dtype=np.float64)
    m = np.asarray(masks)
    if s.shape != m.shape:
        raise ValueError(f"score maps {s.shape} and masks {m.shape} must agree")
    return pixel_auroc(s, m), pixel_ap(s, m)
