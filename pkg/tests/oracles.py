"""Independent reference computations shared by the test modules."""
import itertools
import math

import numpy as np
from scipy.special import gammaln

from decoyqkd.channel import ChannelModel
from decoyqkd.lp import LinearProgram
from decoyqkd.protocol import SIFT_FACTOR


def vertex_oracle(lp: LinearProgram):
    """Minimum over all basic feasible points; None if there are none.

    Valid for problems with finite variable boxes (polytopes).
    """
    n = lp.n_vars
    rows, rhs = [], []
    for a, lo, hi in lp.constraints:
        if math.isfinite(hi):
            rows.append(a), rhs.append(hi)
        if math.isfinite(lo):
            rows.append(-a), rhs.append(-lo)
    for i, (lo, hi) in enumerate(lp.variable_bounds):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(-e), rhs.append(-lo)
        rows.append(e), rhs.append(hi)
    G, h = np.array(rows), np.array(rhs)
    best = None
    for idx in itertools.combinations(range(len(h)), n):
        A = G[list(idx)]
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        x = np.linalg.solve(A, h[list(idx)])
        if np.all(G @ x <= h + 1e-9):
            v = float(lp.objective @ x)
            best = v if best is None else min(best, v)
    return best


def random_box_lp(rng, n, k, integer=True):
    draw = (lambda *s: rng.integers(-3, 4, size=s).astype(float)) if integer else (lambda *s: rng.normal(size=s))
    c = draw(n)
    bounds = []
    for _ in range(n):
        lo = float(rng.integers(-3, 2))
        bounds.append((lo, lo + float(rng.integers(0, 4))))
    cons = []
    for _ in range(k):
        a = draw(n)
        kind = rng.integers(0, 4)
        lo, hi = sorted(float(v) for v in rng.integers(-6, 7, size=2))
        if kind == 0:
            lo = -math.inf
        elif kind == 1:
            hi = math.inf
        elif kind == 2:
            hi = lo  # equality
        cons.append((a, lo, hi))
    return LinearProgram(c, cons, bounds)


def _log_pmf(i, n, p):
    return gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1) + i * math.log(p) + (n - i) * math.log1p(-p)


def _log_sum(logs):
    m = logs.max()
    return m + math.log(math.fsum(np.exp(logs - m)))


def _window(k, n, p, side):
    # terms beyond ~15 standard deviations from k contribute < 1e-40 relative
    sd = math.sqrt(n * p * (1 - p)) + 1.0
    width = int(15 * sd + 50)
    if side == "low":
        return np.arange(max(0, k - width), k + 1, dtype=np.float64)
    return np.arange(k, min(n, k + width) + 1, dtype=np.float64)


def log_cdf(k, n, p):
    """log P[Bin(n, p) <= k] by summing pmf terms, no incomplete-beta functions."""
    if p <= 0 or k >= n:
        return 0.0
    if p >= 1:
        return -math.inf
    return _log_sum(_log_pmf(_window(k, n, p, "low"), n, p))


def log_sf(k, n, p):
    """log P[Bin(n, p) >= k]."""
    if p >= 1 or k <= 0:
        return 0.0
    if p <= 0:
        return -math.inf
    return _log_sum(_log_pmf(_window(k, n, p, "high"), n, p))


def _bisect(pred, lo, hi, iters=60):
    # pred(lo) False, pred(hi) True
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def exact_binomial_bounds(k, n, eps):
    """Clopper-Pearson limits by bisection on summed tail probabilities."""
    le = math.log(eps)
    centre = k / n
    spread = 60 * math.sqrt(max(centre * (1 - centre), 1.0 / n) / n) + 60.0 / n
    lo_b, hi_b = max(0.0, centre - spread), min(1.0, centre + spread)
    if k == n:
        upper = 1.0
    else:
        upper = _bisect(lambda p: log_cdf(k, n, p) <= le, centre, hi_b)
    if k == 0:
        lower = 0.0
    else:
        lower = _bisect(lambda p: log_sf(k, n, p) > le, lo_b, centre)
    return lower, upper


def true_sifted_yields(ch: ChannelModel, n_max: int) -> np.ndarray:
    """Photon-number-resolved sifted single-click probability, straight from the detector model."""
    pb = 1.0 - math.sqrt(1.0 - ch.background_yield)
    out = np.zeros(n_max + 1)
    for n in range(n_max + 1):
        total = 0.0
        for a in (0, 1):
            for flip, w in ((0, 1.0 - ch.visibility_error), (1, ch.visibility_error)):
                d = a ^ flip
                sig = 1.0 - (1.0 - ch.photon_survival * ch.detector_efficiencies[d]) ** n
                hit = 1.0 - (1.0 - sig) * (1.0 - pb)
                total += w * (hit * (1 - pb) + pb * (1 - sig) * (1 - pb))
        out[n] = SIFT_FACTOR * 0.5 * total
    return out
