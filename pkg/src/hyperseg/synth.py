"""Deterministic synthetic categories, anomaly stamps, and the dataset writer.

Ten default categories come from five texture families (stripes, checker,
blobs, cells, gradient), two parameterizations each.  Training anomalies are
confetti noise: randomly sized, placed, and colored squares pasted over the
image with hard borders.  Test anomalies come from a disjoint shape family
(ellipses and slanted thick strokes with an additive color shift), so the
anomaly distribution seen at test time never matches the training one.

Everything is a pure function of (spec, seed, index) through named
:class:`~hyperseg.rng.Rng` substreams: regenerating with the same seed
reproduces every image bit for bit.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .ppm import decode_pgm, decode_ppm, encode_pgm, encode_ppm
from .rng import Rng

__all__ = [
    "CategorySpec",
    "DatasetCounts",
    "default_categories",
    "gen_normal_image",
    "confetti_apply",
    "stamp_test_anomaly",
    "ellipse_mask",
    "stroke_mask",
    "write_dataset",
    "load_manifest",
    "load_category",
    "CategoryData",
]

FAMILIES = ("stripes", "checker", "blobs", "cells", "gradient")


@dataclass(frozen=True)
class CategorySpec:
    name: str
    category_id: int
    family: str
    image_size: int = 64
    period: float = 8.0
    angle: float = 0.0
    palette: tuple[tuple[float, float, float], ...] = ((0.2, 0.3, 0.7), (0.9, 0.8, 0.3))
    noise_amp: float = 0.02

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if not 0 <= self.category_id <= 9:
            raise ValueError(f"category_id must be in [0, 9], got {self.category_id}")


def default_categories(image_size: int = 64) -> list[CategorySpec]:
    """Ten categories, two per family, with well-separated palettes."""
    mk = CategorySpec
    return [
        mk("stripes0", 0, "stripes", image_size, period=8.0, angle=0.0,
           palette=((0.10, 0.15, 0.45), (0.75, 0.80, 0.95))),
        mk("stripes1", 1, "stripes", image_size, period=13.0, angle=0.6,
           palette=((0.55, 0.10, 0.10), (0.95, 0.75, 0.45))),
        mk("checker0", 2, "checker", image_size, period=8.0,
           palette=((0.12, 0.40, 0.18), (0.88, 0.92, 0.80))),
        mk("checker1", 3, "checker", image_size, period=12.0,
           palette=((0.35, 0.12, 0.45), (0.95, 0.90, 0.55))),
        mk("blobs0", 4, "blobs", image_size, period=10.0,
           palette=((0.08, 0.25, 0.30), (0.70, 0.85, 0.90))),
        mk("blobs1", 5, "blobs", image_size, period=16.0,
           palette=((0.45, 0.30, 0.08), (0.98, 0.85, 0.60))),
        mk("cells0", 6, "cells", image_size, period=11.0,
           palette=((0.85, 0.88, 0.92), (0.25, 0.30, 0.60))),
        mk("cells1", 7, "cells", image_size, period=16.0,
           palette=((0.20, 0.20, 0.22), (0.80, 0.55, 0.20))),
        mk("gradient0", 8, "gradient", image_size, period=20.0, angle=0.3,
           palette=((0.15, 0.45, 0.60), (0.90, 0.60, 0.30))),
        mk("gradient1", 9, "gradient", image_size, period=28.0, angle=1.2,
           palette=((0.50, 0.15, 0.40), (0.60, 0.90, 0.55))),
    ]


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size]
    return ys.astype(np.float64), xs.astype(np.float64)


def _mix(palette, t: np.ndarray) -> np.ndarray:
    c0 = np.asarray(palette[0], dtype=np.float64)[:, None, None]
    c1 = np.asarray(palette[1], dtype=np.float64)[:, None, None]
    return c0 + t[None] * (c1 - c0)


def gen_normal_image(spec: CategorySpec, rng: Rng, index: int) -> np.ndarray:
    """Generate normal image ``index`` of a category as a (3, H, W) array in [0, 1]."""
    g = rng.stream("normal", spec.category_id, index)
    size = spec.image_size
    ys, xs = _grid(size)
    fam = spec.family

    if fam == "stripes":
        phase = g.uniform(0.0, 2.0 * math.pi)
        proj = xs * math.cos(spec.angle) + ys * math.sin(spec.angle)
        t = 0.5 * (1.0 + np.sin(2.0 * math.pi * proj / spec.period + phase))
    elif fam == "checker":
        oy, ox = g.uniform(0.0, spec.period, size=2)
        t = ((np.floor((xs + ox) / spec.period) + np.floor((ys + oy) / spec.period)) % 2.0)
    elif fam == "blobs":
        k = 6
        cy = g.uniform(0.0, size, size=k)
        cx = g.uniform(0.0, size, size=k)
        sig = g.uniform(0.5 * spec.period, spec.period, size=k)
        fieldv = np.zeros((size, size))
        for j in range(k):
            fieldv += np.exp(-((ys - cy[j]) ** 2 + (xs - cx[j]) ** 2) / (2.0 * sig[j] ** 2))
        lo, hi = fieldv.min(), fieldv.max()
        t = (fieldv - lo) / (hi - lo) if hi > lo else np.zeros_like(fieldv)
    elif fam == "cells":
        oy, ox = g.uniform(0.0, spec.period, size=2)
        p = spec.period
        dy = ((ys + oy) % p) - p / 2.0
        dx = ((xs + ox) % p) - p / 2.0
        r = np.hypot(dy, dx)
        radius = 0.32 * p
        t = np.clip((radius - r) / 1.5 + 0.5, 0.0, 1.0)  # soft-edged discs
    else:  # gradient
        ang = spec.angle + g.uniform(-0.15, 0.15)
        proj = xs * math.cos(ang) + ys * math.sin(ang)
        lo, hi = proj.min(), proj.max()
        t = (proj - lo) / max(hi - lo, 1e-9)
        t = np.clip(t + 0.08 * np.sin(2.0 * math.pi * proj / spec.period), 0.0, 1.0)

    img = _mix(spec.palette, t)
    if spec.noise_amp > 0.0:
        img = img + g.normal(0.0, spec.noise_amp, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def confetti_apply(
    image: np.ndarray,
    g: np.random.Generator,
    count_range: tuple[int, int] = (1, 4),
    size_range: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Paste uniformly colored squares over the image; return (image', mask).

    Square count, side, center, and RGB color are drawn in that order per
    square.  Centers land inside the image, so squares may be clipped at the
    borders but always cover at least one pixel; borders are hard (no
    smoothing).  The mask marks every covered pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    if size_range is None:
        size_range = (2, max(2, h // 4))
    if size_range[0] < 1 or size_range[1] > min(h, w):
        raise ValueError(f"size_range {size_range} exceeds image extent {h}x{w}")
    out = image.copy()
    mask = np.zeros((1, h, w))
    k = int(g.integers(count_range[0], count_range[1] + 1)) if count_range[1] > 0 else 0
    for _ in range(k):
        side = int(g.integers(size_range[0], size_range[1] + 1))
        cy = int(g.integers(0, h))
        cx = int(g.integers(0, w))
        color = g.uniform(0.0, 1.0, size=3)
        y0, x0 = max(cy - side // 2, 0), max(cx - side // 2, 0)
        y1, x1 = min(cy - side // 2 + side, h), min(cx - side // 2 + side, w)
        out[:, y0:y1, x0:x1] = color[:, None, None]
        mask[0, y0:y1, x0:x1] = 1.0
    return out, mask


def ellipse_mask(size: int, cy: float, cx: float, a: float, b: float) -> np.ndarray:
    """Rasterize a filled axis-aligned ellipse with semi-axes (a, b) as a (H, W) {0,1} mask."""
    ys, xs = _grid(size)
    return (((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0).astype(np.float64)


def stroke_mask(
    size: int, p0: tuple[float, float], p1: tuple[float, float], thickness: float
) -> np.ndarray:
    """Rasterize a thick line segment (capsule) as a (H, W) {0,1} mask."""
    ys, xs = _grid(size)
    y0, x0 = p0
    y1, x1 = p1
    dy, dx = y1 - y0, x1 - x0
    norm_sq = dy * dy + dx * dx
    if norm_sq == 0.0:
        dist = np.hypot(ys - y0, xs - x0)
    else:
        t = np.clip(((ys - y0) * dy + (xs - x0) * dx) / norm_sq, 0.0, 1.0)
        dist = np.hypot(ys - (y0 + t * dy), xs - (x0 + t * dx))
    return (dist <= thickness / 2.0).astype(np.float64)


def _color_shift(image: np.ndarray, mask: np.ndarray, g: np.random.Generator) -> np.ndarray:
    # per-channel additive shift with magnitude >= 0.25 so stamps stay visible
    signs = g.integers(0, 2, size=3) * 2.0 - 1.0
    mags = g.uniform(0.25, 0.75, size=3)
    shift = (signs * mags)[:, None, None]
    return np.clip(image + mask[None] * shift, 0.0, 1.0)


def stamp_test_anomaly(
    image: np.ndarray,
    g: np.random.Generator,
    count_range: tuple[int, int] = (1, 3),
    kind: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stamp held-out-style anomalies (ellipses or slanted strokes) onto the image.

    All stamps in one call share one shape kind (drawn if not given), and the
    color change is an additive per-channel shift rather than a replacement.
    Stroke angles avoid 15-degree bands around the axes, so no stamp ever
    rasterizes to an axis-aligned square.
    """
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    if kind is None:
        kind = "ellipse" if g.random() < 0.5 else "stroke"
    if kind not in ("ellipse", "stroke"):
        raise ValueError(f"unknown stamp kind {kind!r}")
    out = image.copy()
    mask = np.zeros((h, w))
    k = int(g.integers(count_range[0], count_range[1] + 1)) if count_range[1] > 0 else 0
    for _ in range(k):
        if kind == "ellipse":
            a = g.uniform(4.0, max(5.0, h / 6.0))
            b = g.uniform(4.0, max(5.0, h / 6.0))
            cy = g.uniform(0.0, h - 1.0)
            cx = g.uniform(0.0, w - 1.0)
            m = ellipse_mask(h, cy, cx, a, b)
        else:
            y0 = g.uniform(0.0, h - 1.0)
            x0 = g.uniform(0.0, w - 1.0)
            ang = g.uniform(math.pi / 12.0, 5.0 * math.pi / 12.0) + int(g.integers(0, 4)) * math.pi / 2.0
            length = g.uniform(0.2 * h, 0.6 * h)
            thickness = g.uniform(3.0, 6.0)
            p1 = (y0 + length * math.sin(ang), x0 + length * math.cos(ang))
            m = stroke_mask(h, (y0, x0), p1, thickness)
        out = _color_shift(out, m, g)
        mask = np.maximum(mask, m)
    return out, mask[None]


@dataclass(frozen=True)
class DatasetCounts:
    train: int = 16
    test_normal: int = 8
    test_anomalous: int = 8


@dataclass
class CategoryData:
    """One category loaded back from disk."""

    name: str
    category_id: int
    train_images: np.ndarray  # (n_train, 3, H, W)
    test_images: np.ndarray  # (n_test, 3, H, W)
    test_masks: np.ndarray  # (n_test, 1, H, W)
    test_kinds: list[str | None] = field(default_factory=list)  # anomaly type or None


def write_dataset(
    root: str | os.PathLike,
    specs: list[CategorySpec],
    rng: Rng,
    counts: DatasetCounts = DatasetCounts(),
) -> dict:
    """Write PPM/PGM files plus a manifest for every category; returns the manifest.

    Test-anomalous images alternate between the two stamp kinds by index, so
    both anomaly types are always represented.  Rejects a non-empty target
    directory; re-running with the same seed reproduces every byte.
    """
    root = os.fspath(root)
    if os.path.exists(root) and os.listdir(root):
        raise ValueError(f"refusing to write into non-empty directory {root!r}")
    os.makedirs(root, exist_ok=True)

    manifest: dict = {
        "format": "hyperseg-dataset-v1",
        "seed": rng.seed,
        "counts": {"train": counts.train, "test_normal": counts.test_normal,
                   "test_anomalous": counts.test_anomalous},
        "categories": [],
    }
    for spec in specs:
        cat_dir = os.path.join(root, spec.name)
        os.makedirs(os.path.join(cat_dir, "train"))
        os.makedirs(os.path.join(cat_dir, "test"))
        files = []
        for i in range(counts.train):
            rel = f"{spec.name}/train/normal_{i:03d}.ppm"
            _write(root, rel, encode_ppm(gen_normal_image(spec, rng, i)))
            files.append({"path": rel, "role": "train_normal", "index": i,
                          "anomaly_type": None, "mask_path": None})
        for i in range(counts.test_normal):
            idx = counts.train + i
            rel = f"{spec.name}/test/normal_{i:03d}.ppm"
            _write(root, rel, encode_ppm(gen_normal_image(spec, rng, idx)))
            files.append({"path": rel, "role": "test_normal", "index": idx,
                          "anomaly_type": None, "mask_path": None})
        for i in range(counts.test_anomalous):
            idx = counts.train + counts.test_normal + i
            base = gen_normal_image(spec, rng, idx)
            kind = "ellipse" if i % 2 == 0 else "stroke"
            img, mask = stamp_test_anomaly(base, rng.stream("stamp", spec.category_id, idx), kind=kind)
            rel = f"{spec.name}/test/anomalous_{i:03d}.ppm"
            mrel = f"{spec.name}/test/anomalous_{i:03d}_mask.pgm"
            _write(root, rel, encode_ppm(img))
            _write(root, mrel, encode_pgm(mask))
            files.append({"path": rel, "role": "test_anomalous", "index": idx,
                          "anomaly_type": kind, "mask_path": mrel})
        manifest["categories"].append({
            "name": spec.name, "id": spec.category_id, "family": spec.family,
            "image_size": spec.image_size, "files": files,
        })

    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _write(root: str, rel: str, data: bytes):
    with open(os.path.join(root, rel), "wb") as fh:
        fh.write(data)


def load_manifest(root: str | os.PathLike) -> dict:
    path = os.path.join(os.fspath(root), "manifest.json")
    if not os.path.exists(path):
        raise ValueError(f"no manifest.json under {os.fspath(root)!r}; run gen-data first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_category(root: str | os.PathLike, manifest: dict, name: str) -> CategoryData:
    root = os.fspath(root)
    entry = next((c for c in manifest["categories"] if c["name"] == name), None)
    if entry is None:
        known = [c["name"] for c in manifest["categories"]]
        raise ValueError(f"category {name!r} not in dataset (has {known})")
    train, test, masks, kinds = [], [], [], []
    size = entry["image_size"]
    for f in entry["files"]:
        with open(os.path.join(root, f["path"]), "rb") as fh:
            img = decode_ppm(fh.read())
        if f["role"] == "train_normal":
            train.append(img)
            continue
        test.append(img)
        kinds.append(f["anomaly_type"])
        if f["mask_path"] is None:
            masks.append(np.zeros((1, size, size)))
        else:
            with open(os.path.join(root, f["mask_path"]), "rb") as fh:
                masks.append(decode_pgm(fh.read())[None])
    return CategoryData(
        name=name,
        category_id=entry["id"],
        train_images=np.stack(train),
        test_images=np.stack(test),
        test_masks=np.stack(masks),
        test_kinds=kinds,
    )
