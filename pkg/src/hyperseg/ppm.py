"""Binary PPM (P6) and PGM (P5) codecs for 8-bit images and masks.

Images travel through the toolkit as float64 arrays in [0, 1] with layout
(3, H, W); masks as {0, 1} arrays of shape (H, W) or (1, H, W).  On disk,
images are quantized to 8 bits and masks stored as 0/255.  Encoding is
byte-deterministic: the same array always yields the same file.
"""

from __future__ import annotations

import numpy as np

__all__ = ["encode_ppm", "decode_ppm", "encode_pgm", "decode_pgm"]


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    """Encode a (3, H, W) float image in [0, 1] as binary PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got shape {image.shape}")
    _, h, w = image.shape
    raw = _quantize(image).transpose(1, 2, 0).tobytes()
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raw


def encode_pgm(mask: np.ndarray, scale: bool = False) -> bytes:
    """Encode a single-channel array as binary PGM.

    With ``scale`` off the input must be binary and is written as 0/255;
    with ``scale`` on the input is min-max scaled to 0..255 (for heatmaps).
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.ndim != 2:
        raise ValueError(f"expected (H, W) or (1, H, W), got shape {mask.shape}")
    h, w = mask.shape
    if scale:
        lo, hi = mask.min(), mask.max()
        vals = np.zeros_like(mask) if hi == lo else (mask - lo) / (hi - lo)
        raw = _quantize(vals).tobytes()
    else:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask must be binary; use scale=True for continuous data")
        raw = (mask.astype(np.uint8) * 255).tobytes()
    return f"P5\n{w} {h}\n255\n".encode("ascii") + raw


def _parse_header(data: bytes, magic: bytes) -> tuple[int, int, int]:
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    fields, pos = [], len(magic)
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], pos + 1  # width, height, data offset


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode binary PPM into a (3, H, W) float array in [0, 1]."""
    w, h, off = _parse_header(data, b"P6")
    raw = np.frombuffer(data, dtype=np.uint8, count=3 * h * w, offset=off)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode binary PGM into a (H, W) float array; 0/255 maps to 0/1."""
    w, h, off = _parse_header(data, b"P5")
    raw = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=off)
    return raw.reshape(h, w).astype(np.float64) / 255.0
