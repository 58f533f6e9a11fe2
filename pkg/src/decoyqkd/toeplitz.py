"""Toeplitz-matrix hashing over GF(2) for privacy amplification.

The m x n matrix is T[i][j] = seed[i - j + n - 1]. Row i is therefore the
reversed seed read from offset m - 1 - i, which lets every row be taken as a
contiguous window of one packed bit string.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng

__all__ = ["ToeplitzSpec", "toeplitz_hash", "toeplitz_matrix", "reference_hash"]

_ROW_BLOCK = 512


def _bits(values, name: str) -> np.ndarray:
    a = np.asarray(values)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError(f"{name} must contain only 0 and 1")
    return a.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class ToeplitzSpec:
    input_length: int
    output_length: int
    diagonal_seed: np.ndarray

    def __post_init__(self):
        n, m = self.input_length, self.output_length
        if n < 1 or m < 0:
            raise ValueError("need input_length >= 1 and output_length >= 0")
        if m > n:
            raise ValueError(f"output_length {m} exceeds input_length {n}")
        seed = _bits(self.diagonal_seed, "diagonal_seed")
        if len(seed) != n + m - 1:
            raise ValueError(f"diagonal_seed must have n + m - 1 = {n + m - 1} bits, got {len(seed)}")
        seed.setflags(write=False)
        object.__setattr__(self, "diagonal_seed", seed)

    @classmethod
    def random(cls, input_length: int, output_length: int, seed: int) -> "ToeplitzSpec":
        k = input_length + output_length - 1
        bits = rng.stream(seed, "toeplitz").integers(0, 2, size=max(k, 0), dtype=np.uint8)
        return cls(input_length, output_length, bits)

    def __eq__(self, other):
        if not isinstance(other, ToeplitzSpec):
            return NotImplemented
        return (
            self.input_length == other.input_length
            and self.output_length == other.output_length
            and np.array_equal(self.diagonal_seed, other.diagonal_seed)
        )

    __hash__ = None


def _pack(bits: np.ndarray, words: int) -> np.ndarray:
    buf = np.zeros(words * 64, dtype=np.uint8)
    buf[: len(bits)] = bits[: words * 64]
    return np.packbits(buf, bitorder="little").view("<u8")


def toeplitz_hash(bits, spec: ToeplitzSpec) -> np.ndarray:
    """Return T . bits over GF(2) as a uint8 array of length m."""
    x = _bits(bits, "bits")
    n, m = spec.input_length, spec.output_length
    if len(x) != n:
        raise ValueError(f"input has {len(x)} bits, spec expects {n}")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)

    nw = -(-n // 64)
    xw = _pack(x, nw)  # zero padding past n masks the tail of every row
    rev = spec.diagonal_seed[::-1]
    total = -(-len(rev) // 64) + 1
    shifted = np.stack([_pack(rev[s:], total) for s in range(64)])

    out = np.empty(m, dtype=np.uint8)
    cols = np.arange(nw)
    for lo in range(0, m, _ROW_BLOCK):
        rows = np.arange(lo, min(lo + _ROW_BLOCK, m))
        offset = m - 1 - rows
        window = shifted[(offset % 64)[:, None], (offset // 64)[:, None] + cols]
        out[rows] = np.bitwise_count(window & xw).sum(axis=1, dtype=np.int64) & 1
    return out


def toeplitz_matrix(spec: ToeplitzSpec) -> np.ndarray:
    """Dense m x n matrix; meant for small instances and checks."""
    n, m = spec.input_length, spec.output_length
    i = np.arange(m)[:, None]
    j = np.arange(n)[None, :]
    return spec.diagonal_seed[i - j + n - 1] if m else np.zeros((0, n), dtype=np.uint8)


def reference_hash(bits, spec: ToeplitzSpec) -> np.ndarray:
    """Bit-by-bit evaluation straight from the matrix definition."""
    x = _bits(bits, "bits")
    if len(x) != spec.input_length:
        raise ValueError("length mismatch")
    n, m, s = spec.input_length, spec.output_length, spec.diagonal_seed
    out = np.zeros(m, dtype=np.uint8)
    for i in range(m):
        acc = 0
        for j in range(n):
            acc ^= int(s[i - j + n - 1]) & int(x[j])
        out[i] = acc
    return out
