import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decoyqkd.toeplitz import ToeplitzSpec, reference_hash, toeplitz_hash, toeplitz_matrix


def naive(bits, seed, m):
    n = len(bits)
    out = []
    for i in range(m):
        acc = 0
        for j in range(n):
            acc ^= seed[i - j + n - 1] & bits[j]
        out.append(acc)
    return np.array(out, dtype=np.uint8)


def bitvec(s):
    return np.array([int(c) for c in s], dtype=np.uint8)


def test_hand_example():
    spec = ToeplitzSpec(5, 3, bitvec("1011010"))
    # T[i][j] = seed[i - j + 4], multiplied out by hand
    hand = np.array([[0, 1, 1, 0, 1], [1, 0, 1, 1, 0], [0, 1, 0, 1, 1]], dtype=np.uint8)
    assert np.array_equal(toeplitz_matrix(spec), hand)
    x = bitvec("10110")
    assert np.array_equal(toeplitz_hash(x, spec), (hand.astype(int) @ x) % 2)
    assert np.array_equal(toeplitz_hash(x, spec), bitvec("111"))


@pytest.mark.parametrize("n,m", [(1, 1), (7, 0), (63, 5), (64, 64), (65, 3), (130, 129), (1000, 513), (1500, 1024)])
def test_packed_matches_naive(n, m):
    g = np.random.default_rng(n * 1000 + m)
    spec = ToeplitzSpec(n, m, g.integers(0, 2, n + m - 1, dtype=np.uint8))
    x = g.integers(0, 2, n, dtype=np.uint8)
    got = toeplitz_hash(x, spec)
    assert got.dtype == np.uint8 and len(got) == m
    assert np.array_equal(got, naive(x, spec.diagonal_seed, m))


@pytest.mark.parametrize("n,m", [(10_000, 1200), (9_999, 257)])
def test_packed_matches_reference_at_scale(n, m):
    g = np.random.default_rng(n + m)
    spec = ToeplitzSpec.random(n, m, seed=int(g.integers(1 << 30)))
    x = g.integers(0, 2, n, dtype=np.uint8)
    assert np.array_equal(toeplitz_hash(x, spec), reference_hash(x, spec))
    rows = g.choice(m, size=20, replace=False)
    dense = toeplitz_matrix(spec)
    assert np.array_equal(toeplitz_hash(x, spec)[rows], (dense[rows].astype(np.int64) @ x) % 2)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 300), frac=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
def test_linearity_and_zero(n, frac, seed):
    m = int(frac * n)
    g = np.random.default_rng(seed)
    spec = ToeplitzSpec(n, m, g.integers(0, 2, n + m - 1, dtype=np.uint8))
    a = g.integers(0, 2, n, dtype=np.uint8)
    b = g.integers(0, 2, n, dtype=np.uint8)
    assert not toeplitz_hash(np.zeros(n, dtype=np.uint8), spec).any()
    assert np.array_equal(toeplitz_hash(a ^ b, spec), toeplitz_hash(a, spec) ^ toeplitz_hash(b, spec))


def test_collision_rate_is_two_to_minus_m():
    n, m, trials = 40, 6, 10_000
    g = np.random.default_rng(77)
    x = g.integers(0, 2, n, dtype=np.uint8)
    y = x.copy()
    y[[3, 17, 30]] ^= 1
    hits = 0
    for _ in range(trials):
        spec = ToeplitzSpec(n, m, g.integers(0, 2, n + m - 1, dtype=np.uint8))
        hits += np.array_equal(toeplitz_hash(x, spec), toeplitz_hash(y, spec))
    p = 2.0**-m
    assert abs(hits - trials * p) <= 5 * math.sqrt(trials * p * (1 - p))


def test_random_spec_is_deterministic():
    a, b = ToeplitzSpec.random(100, 40, seed=3), ToeplitzSpec.random(100, 40, seed=3)
    assert a == b and a != ToeplitzSpec.random(100, 40, seed=4)
    assert len(a.diagonal_seed) == 139
    with pytest.raises(ValueError):
        a.diagonal_seed[0] ^= 1


@pytest.mark.parametrize(
    "n,m,seed_len",
    [(5, 6, 10), (5, 3, 6), (5, 3, 8), (0, 0, 0)],
)
def test_spec_validation(n, m, seed_len):
    with pytest.raises(ValueError):
        ToeplitzSpec(n, m, np.zeros(max(seed_len, 0), dtype=np.uint8))


def test_bad_bits_rejected():
    with pytest.raises(ValueError):
        ToeplitzSpec(2, 1, np.array([0, 2]))
    spec = ToeplitzSpec(4, 2, bitvec("10101"))
    with pytest.raises(ValueError):
        toeplitz_hash(bitvec("101"), spec)
    with pytest.raises(ValueError):
        toeplitz_hash(np.array([0, 1, 3, 0]), spec)
