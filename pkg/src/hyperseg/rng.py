"""Seeded, splittable random streams.

Every random draw in the toolkit comes from a named substream derived from a
single 64-bit root seed.  A substream is keyed by a tuple such as
``("confetti", category_id, image_index)``; the key is hashed (SHA-256)
together with the root seed into a 128-bit Philox key.  Philox is counter
based, so streams are independent by construction and bit-identical on every
platform.  Adding draws to one substream can never shift the values produced
by another.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["Rng"]


def _key128(seed: int, parts: tuple) -> np.ndarray:
    """Hash (seed, *parts) into two uint64 words for a Philox key."""
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for p in parts:
        if isinstance(p, str):
            raw = p.encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(4, "little") + raw)
        elif isinstance(p, (int, np.integer)):
            h.update(b"i" + int(p).to_bytes(8, "little", signed=True))
        else:
            raise TypeError(f"stream key parts must be str or int, got {type(p).__name__}")
    digest = h.digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


@dataclass(frozen=True)
class Rng:
    """Root of a family of named, independent random substreams."""

    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    def stream(self, *key: str | int) -> np.random.Generator:
        """Return a fresh generator for the substream named by ``key``."""
        return np.random.Generator(np.random.Philox(key=_key128(self.seed, key)))
