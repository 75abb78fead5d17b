"""Hypersphere-family one-class losses and their score-map gradients.

Two training losses operate on a non-negative anomaly score map ``A`` of
shape ``(n, ...)`` (first axis = images, remaining axes flattened to the
``m`` pixels of each image) with a binary mask ``Y`` of the same shape:

* :func:`loss_fcdd_baseline` pools the anomalous scores of each image into a
  single mean before applying the push function, so one hot pixel can mute
  the gradient of every other anomalous pixel in that image.
* :func:`loss_proposed` applies the push function to every anomalous pixel
  individually, averages over all ``n*m`` pixels of the batch at once, and
  rescales the anomalous term by the normal/anomalous pixel-count ratio
  ``|J0|/|J1|`` so sparse anomalies are not drowned out.

Both return ``(loss, dloss_dA)`` with the gradient computed analytically.
:func:`loss_deep_svdd` and :func:`loss_hsc` are the image-level ancestors,
kept as reference implementations (they are not used in training).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PixelIndexSets",
    "pseudo_huber",
    "pseudo_huber_grad",
    "push",
    "push_grad",
    "loss_deep_svdd",
    "loss_hsc",
    "loss_fcdd_baseline",
    "loss_proposed",
]

_LN2 = float(np.log(2.0))


def pseudo_huber(z):
    """sqrt(z^2 + 1) - 1, elementwise; smooth, non-negative, ~|z| for large z."""
    z = np.asarray(z, dtype=np.float64)
    return np.hypot(z, 1.0) - 1.0


def pseudo_huber_grad(z):
    """d/dz of :func:`pseudo_huber`: z / sqrt(z^2 + 1)."""
    z = np.asarray(z, dtype=np.float64)
    return z / np.hypot(z, 1.0)


def push(s):
    """-log(1 - exp(-s)) for s > 0, elementwise.

    Diverges as s -> 0+ and decays like exp(-s) for large s.  The naive form
    underflows (1 - exp(-s) rounds to 1, then to 0) at both ends, so the two
    regimes are computed as -log(-expm1(-s)) for s < ln 2 and
    -log1p(-exp(-s)) otherwise.
    """
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0.0):
        raise ValueError("push is only defined for strictly positive scores (p(0) = +inf)")
    out = np.empty_like(s)
    small = s < _LN2
    out[small] = -np.log(-np.expm1(-s[small]))
    big = ~small
    out[big] = -np.log1p(-np.exp(-s[big]))
    return out if out.ndim else float(out)


def push_grad(s):
    """d/ds of :func:`push`: -1 / (exp(s) - 1), always negative."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0.0):
        raise ValueError("push is only defined for strictly positive scores (p(0) = +inf)")
    out = -1.0 / np.expm1(s)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PixelIndexSets:
    """Index pairs of the normal (J0) and anomalous (J1) pixels of a batch."""

    j0: np.ndarray  # (|J0|, 2) rows of (image, pixel) indices
    j1: np.ndarray  # (|J1|, 2)

    @classmethod
    def from_masks(cls, masks: np.ndarray) -> "PixelIndexSets":
        y = _flatten_pixels(np.asarray(masks))
        _check_binary(y)
        i, j = np.nonzero(y == 0)
        i1, j1 = np.nonzero(y == 1)
        return cls(j0=np.stack([i, j], axis=1), j1=np.stack([i1, j1], axis=1))

    @property
    def n_normal(self) -> int:
        return len(self.j0)

    @property
    def n_anomalous(self) -> int:
        return len(self.j1)


def _flatten_pixels(a: np.ndarray) -> np.ndarray:
    if a.ndim < 2:
        raise ValueError(f"expected (n_images, ...pixels...), got ndim={a.ndim}")
    return a.reshape(a.shape[0], -1)


def _check_binary(y: np.ndarray):
    if not np.isin(y, (0, 1)).all():
        raise ValueError("masks must be binary (0 = normal, 1 = anomalous)")


def _check_pair(scores, masks):
    a = np.asarray(scores, dtype=np.float64)
    y = np.asarray(masks, dtype=np.float64)
    if a.shape != y.shape:
        raise ValueError(f"score map shape {a.shape} != mask shape {y.shape}")
    a2, y2 = _flatten_pixels(a), _flatten_pixels(y)
    _check_binary(y2)
    if np.any(a2 < 0.0):
        raise ValueError("score maps must be non-negative")
    return a, a2, y2


def loss_deep_svdd(features: np.ndarray, center: np.ndarray) -> float:
    """Mean squared Euclidean distance of feature vectors to the center."""
    f = np.asarray(features, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != c.shape[0]:
        raise ValueError(f"features {f.shape} incompatible with center {c.shape}")
    return float(np.mean(np.sum((f - c) ** 2, axis=1)))


def loss_hsc(features: np.ndarray, center: np.ndarray, labels: np.ndarray) -> float:
    """Hypersphere classifier loss: pull normals to the center, push anomalies away."""
    f = np.asarray(features, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (f.shape[0],):
        raise ValueError(f"labels shape {y.shape} must be ({f.shape[0]},)")
    _check_binary(y)
    dist_sq = np.sum((f - c) ** 2, axis=1)
    h = np.sqrt(dist_sq + 1.0) - 1.0
    anom = y == 1
    if np.any(h[anom] <= 0.0):
        raise ValueError("anomalous sample lies exactly at the center (push singularity)")
    terms = np.where(anom, 0.0, h)
    if anom.any():
        terms[anom] = push(h[anom])
    return float(terms.mean())


def loss_fcdd_baseline(scores: np.ndarray, masks: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-image pooled loss: mean normal score plus push of the mean anomalous score.

    Both inner terms divide by the full pixel count m, not by the respective
    class counts.  Images without any anomalous pixel would put 0 into the
    push function (which diverges there), so their push term is omitted.
    Returns the loss and its gradient with respect to the score map.
    """
    a, a2, y2 = _check_pair(scores, masks)
    n, m = a2.shape
    normal_mean = ((1.0 - y2) * a2).sum(axis=1) / m
    anom_mean = (y2 * a2).sum(axis=1) / m
    has_anom = (y2 == 1).any(axis=1)
    if np.any(has_anom & (anom_mean <= 0.0)):
        raise ValueError("image with anomalous pixels has zero pooled score (push singularity)")

    per_image = normal_mean.copy()
    grad2 = (1.0 - y2) / (n * m)
    if has_anom.any():
        pooled = anom_mean[has_anom]
        per_image[has_anom] += push(pooled)
        grad2[has_anom] += (push_grad(pooled)[:, None] * y2[has_anom]) / (n * m)
    return float(per_image.mean()), grad2.reshape(a.shape)


def loss_proposed(
    scores: np.ndarray, masks: np.ndarray, balance: bool = True
) -> tuple[float, np.ndarray]:
    """Per-pixel push loss averaged over all batch pixels.

    loss = (1/nm) * sum_ij [ (1-Y_ij) A_ij + w * Y_ij * push(A_ij) ]
    with w = |J0|/|J1| when ``balance`` is on (w = 1 if there are no normal
    pixels), w = 1 otherwise.  Returns the loss and its gradient with respect
    to the score map.
    """
    a, a2, y2 = _check_pair(scores, masks)
    n, m = a2.shape
    anom = y2 == 1
    n_anom = int(anom.sum())
    n_norm = n * m - n_anom

    total = ((1.0 - y2) * a2).sum()
    grad2 = (1.0 - y2) / (n * m)
    if n_anom:
        a_anom = a2[anom]
        if np.any(a_anom <= 0.0):
            raise ValueError("anomalous pixel with zero score (push singularity)")
        factor = (n_norm / n_anom) if (balance and n_norm > 0) else 1.0
        total += factor * push(a_anom).sum()
        grad2[anom] += factor * push_grad(a_anom) / (n * m)
    return float(total / (n * m)), grad2.reshape(a.shape)
