"""Reproducible random streams built on the Philox4x64-10 counter-based generator.

A stream is addressed by ``(seed, purpose, index)``: the seed and a purpose
tag form the Philox key, the index selects a disjoint region of the counter
space. Streams for different batches therefore never overlap and can be
drawn in any order, or concurrently, with identical results.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "PURPOSES"]

# fixed tags; changing any of these changes every seeded output
PURPOSES = {
    "pulses": 1,
    "aggregate": 2,
    "sift": 3,
    "cascade": 4,
    "toeplitz": 5,
    "verify": 6,
    "test": 7,
}

_MASK64 = (1 << 64) - 1


def _purpose_tag(purpose: str) -> int:
    if purpose in PURPOSES:
        return PURPOSES[purpose]
    return 0x10000 + zlib.crc32(purpose.encode())


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, purpose, index)``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    key = np.array([seed & _MASK64, _purpose_tag(purpose)], dtype=np.uint64)
    # index goes in the high counter word: 2**128 draws per stream before overlap
    counter = np.array([0, 0, index & _MASK64, (index >> 64) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
