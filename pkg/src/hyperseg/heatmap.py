"""Full-resolution anomaly score maps via Gaussian upsampling.

The network emits one pre-score per low-resolution pixel; the score map is
``upsample(pseudo_huber(pre-scores))`` where the upsampling scatters each
low-resolution value through a Gaussian kernel with stride ``f`` and then
divides every output pixel by the total kernel mass it received.  The mass
normalization makes the operator exactly constant-preserving (including at
borders), linear, and non-negativity-preserving.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .losses import pseudo_huber
from .model import FcnParams, forward
from .ppm import encode_pgm

__all__ = [
    "gaussian_kernel",
    "gaussian_upsample",
    "gaussian_upsample_adjoint",
    "score_map",
    "heatmap_pgm",
]


def gaussian_kernel(factor: int) -> np.ndarray:
    """(2f+1)x(2f+1) isotropic Gaussian sampled at integer offsets, sigma = f/2.

    Not pre-normalized; normalization happens per output pixel during
    upsampling.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    offs = np.arange(-factor, factor + 1, dtype=np.float64)
    sigma = factor / 2.0
    d2 = offs[:, None] ** 2 + offs[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma**2))


@lru_cache(maxsize=16)
def _upsample_matrix(h: int, w: int, factor: int) -> np.ndarray:
    """Dense (f^2*h*w, h*w) operator mapping a low-res map to the full-res map.

    Low pixel (i, j) anchors at output pixel (f*i + f//2, f*j + f//2); the
    kernel is scattered around the anchor and each output row is divided by
    the kernel mass that reached it.
    """
    k = gaussian_kernel(factor)
    fh, fw = factor * h, factor * w
    mat = np.zeros((fh * fw, h * w))
    half = factor // 2
    for i in range(h):
        for j in range(w):
            ay, ax = factor * i + half, factor * j + half
            y0, y1 = max(ay - factor, 0), min(ay + factor + 1, fh)
            x0, x1 = max(ax - factor, 0), min(ax + factor + 1, fw)
            sub = k[y0 - ay + factor : y1 - ay + factor, x0 - ax + factor : x1 - ax + factor]
            rows = (np.arange(y0, y1)[:, None] * fw + np.arange(x0, x1)[None, :]).ravel()
            mat[rows, i * w + j] += sub.ravel()
    mass = mat.sum(axis=1, keepdims=True)
    return mat / mass


def _flatten_maps(low: np.ndarray) -> tuple[np.ndarray, tuple[int, ...], int, int]:
    low = np.asarray(low, dtype=np.float64)
    if low.ndim < 2:
        raise ValueError(f"expected at least (h, w), got shape {low.shape}")
    h, w = low.shape[-2:]
    lead = low.shape[:-2]
    return low.reshape(-1, h * w), lead, h, w


def gaussian_upsample(low: np.ndarray, factor: int) -> np.ndarray:
    """Upsample (..., h, w) to (..., f*h, f*w); linear and constant-preserving."""
    flat, lead, h, w = _flatten_maps(low)
    mat = _upsample_matrix(h, w, factor)
    out = flat @ mat.T
    return out.reshape(*lead, factor * h, factor * w)


def gaussian_upsample_adjoint(grad_out: np.ndarray, low_h: int, low_w: int, factor: int) -> np.ndarray:
    """Exact adjoint of :func:`gaussian_upsample` for gradients of shape (..., f*h, f*w)."""
    flat, lead, gh, gw = _flatten_maps(grad_out)
    if gh != factor * low_h or gw != factor * low_w:
        raise ValueError(f"gradient shape {gh}x{gw} does not match {factor}x upsampled {low_h}x{low_w}")
    mat = _upsample_matrix(low_h, low_w, factor)
    out = flat @ mat
    return out.reshape(*lead, low_h, low_w)


def score_map(params: FcnParams, images: np.ndarray, factor: int = 4) -> np.ndarray:
    """Anomaly heatmap at input resolution for a preprocessed (N, C, H, W) batch."""
    pre = forward(params, images)
    return gaussian_upsample(pseudo_huber(pre), factor)


def heatmap_pgm(scores: np.ndarray) -> bytes:
    """Encode one (H, W) or (1, H, W) score map as a min-max scaled PGM."""
    return encode_pgm(scores, scale=True)
