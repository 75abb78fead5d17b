"""Resize, crop, color jitter, pixel noise, and normalization.

The training chain applies, in order: resize to an intermediate size, a coin
flip between resizing down and cropping at a random position, color jitter
at one of two strengths (another coin flip), and per-pixel gated Gaussian
noise.  Geometric steps move image and mask together (masks use nearest
neighbor and stay binary); photometric steps never touch masks.  Test images
only get the resize plus :func:`lcn` and :func:`minmax`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AugmentConfig",
    "resize_bilinear",
    "resize_nearest",
    "color_jitter",
    "augment",
    "lcn",
    "minmax",
    "preprocess_test",
]


@dataclass(frozen=True)
class AugmentConfig:
    resize_to: int = 69
    out_size: int = 64
    crop_prob: float = 0.5
    jitter_strong: float = 0.04
    jitter_weak: float = 0.0005
    noise_enabled: bool = True
    noise_pixel_prob: float = 0.5
    noise_sigma_frac: float = 0.1


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    # half-pixel-center alignment, clamped to the valid range
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(src, 0.0, n_in - 1.0)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize of a (C, H, W) image."""
    image = np.asarray(image, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError("target extents must be positive")
    _, h, w = image.shape
    ys = _axis_coords(out_h, h)
    y0 = np.floor(ys).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = ys - y0
    rows = image[:, y0, :] * (1.0 - fy)[None, :, None] + image[:, y1, :] * fy[None, :, None]
    xs = _axis_coords(out_w, w)
    x0 = np.floor(xs).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    fx = xs - x0
    out = rows[:, :, x0] * (1.0 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    # fixed layout so downstream reductions are order-deterministic
    return np.ascontiguousarray(out)


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize; keeps binary masks binary."""
    mask = np.asarray(mask, dtype=np.float64)
    squeeze = mask.ndim == 2
    if squeeze:
        mask = mask[None]
    _, h, w = mask.shape
    ys = np.clip(np.rint(_axis_coords(out_h, h)).astype(int), 0, h - 1)
    xs = np.clip(np.rint(_axis_coords(out_w, w)).astype(int), 0, w - 1)
    out = mask[:, ys][:, :, xs]
    return out[0] if squeeze else out


def _rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img
    maxc = img.max(axis=0)
    minc = img.min(axis=0)
    v = maxc
    c = maxc - minc
    safe_c = np.where(c > 0, c, 1.0)
    s = np.where(maxc > 0, c / np.where(maxc > 0, maxc, 1.0), 0.0)
    h6 = np.zeros_like(maxc)
    rmax = (maxc == r) & (c > 0)
    gmax = (maxc == g) & (c > 0) & ~rmax
    bmax = (c > 0) & ~rmax & ~gmax
    h6 = np.where(rmax, ((g - b) / safe_c) % 6.0, h6)
    h6 = np.where(gmax, (b - r) / safe_c + 2.0, h6)
    h6 = np.where(bmax, (r - g) / safe_c + 4.0, h6)
    return np.stack([h6 / 6.0, s, v])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def color_jitter(image: np.ndarray, g: np.random.Generator, strength: float) -> np.ndarray:
    """Brightness/contrast/saturation scaled by factors in [1-s, 1+s]; hue shifted by [-s, s] turns.

    Sub-steps run in that fixed order, each followed by a clamp to [0, 1].
    A factor of exactly 1.0 (or hue shift 0.0) skips its sub-step, so
    strength 0 is a bit-exact no-op while still consuming the same draws.
    """
    image = np.asarray(image, dtype=np.float64)
    fb, fc, fs = g.uniform(1.0 - strength, 1.0 + strength, size=3)
    hue = g.uniform(-strength, strength)
    if fb != 1.0:
        image = np.clip(image * fb, 0.0, 1.0)
    if fc != 1.0:
        mean = image.mean()
        image = np.clip(mean + fc * (image - mean), 0.0, 1.0)
    if fs != 1.0:
        gray = image.mean(axis=0, keepdims=True)
        image = np.clip(gray + fs * (image - gray), 0.0, 1.0)
    if hue != 0.0:
        hsv = _rgb_to_hsv(np.clip(image, 0.0, 1.0))
        hsv[0] = (hsv[0] + hue) % 1.0
        image = np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)
    return image


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    g: np.random.Generator,
    cfg: AugmentConfig = AugmentConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the full training-time augmentation chain to one image + mask."""
    image = resize_bilinear(image, cfg.resize_to, cfg.resize_to)
    mask = resize_nearest(mask, cfg.resize_to, cfg.resize_to)

    out = cfg.out_size
    if g.random() < cfg.crop_prob:
        oy = int(g.integers(0, cfg.resize_to - out + 1))
        ox = int(g.integers(0, cfg.resize_to - out + 1))
        image = image[:, oy : oy + out, ox : ox + out]
        mask = mask[..., oy : oy + out, ox : ox + out]
    else:
        image = resize_bilinear(image, out, out)
        mask = resize_nearest(mask, out, out)

    strength = cfg.jitter_strong if g.random() < 0.5 else cfg.jitter_weak
    image = color_jitter(image, g, strength)

    if cfg.noise_enabled:
        gate = g.random(size=(1, out, out)) < cfg.noise_pixel_prob
        noise = g.normal(0.0, 1.0, size=image.shape)
        sigma = cfg.noise_sigma_frac * image.std()
        image = image + gate * noise * sigma
    return image, mask


def lcn(image: np.ndarray) -> np.ndarray:
    """Contrast normalization: subtract the global mean, divide by the mean absolute deviation.

    Mean and deviation pool all channels and pixels of the image.  A floor of
    1e-8 on the deviation maps constant images to all zeros.
    """
    image = np.asarray(image, dtype=np.float64)
    centered = image - image.mean()
    mad = np.abs(centered).mean()
    return centered / max(mad, 1e-8)


def minmax(image: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; constant images map to all 0.5."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = image.min(), image.max()
    if hi == lo:
        return np.full_like(image, 0.5)
    return (image - lo) / (hi - lo)


def preprocess_test(image: np.ndarray, out_size: int = 64) -> np.ndarray:
    """Test-time preprocessing: resize, then lcn + minmax (no crop/jitter/noise)."""
    image = resize_bilinear(image, out_size, out_size)
    return minmax(lcn(image))
