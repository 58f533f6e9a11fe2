"""Exact statistical kernels: binary entropy, Poisson photon statistics and
one-sided exact binomial confidence bounds.

No Gaussian or Chernoff shortcuts are used anywhere in this module; binomial
tails are evaluated through the regularized incomplete beta function and the
bounds are located by bisection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import betainc

__all__ = [
    "ConfidenceInterval",
    "binary_entropy",
    "poisson_pmf",
    "poisson_tail_mass",
    "binomial_cdf",
    "binomial_sf",
    "binomial_bounds",
]

BISECTION_TOL = 1e-12


@dataclass(frozen=True)
class ConfidenceInterval:
    """Two one-sided bounds on a probability.

    Each side on its own fails with probability at most ``epsilon_per_side``.
    """

    lower: float
    upper: float
    epsilon_per_side: float

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper <= 1.0:
            raise ValueError(f"invalid interval [{self.lower}, {self.upper}]")
        if not 0.0 < self.epsilon_per_side < 0.5:
            raise ValueError(f"epsilon_per_side must be in (0, 0.5), got {self.epsilon_per_side}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, p: float) -> bool:
        return self.lower <= p <= self.upper


def binary_entropy(p: float) -> float:
    """Shannon entropy of a Bernoulli(p) variable in bits (0 log 0 = 0)."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"binary_entropy: p must lie in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def poisson_pmf(n: int, mu: float) -> float:
    """P[N = n] for N ~ Poisson(mu), evaluated in log space."""
    if mu < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mu}")
    if n < 0:
        raise ValueError(f"photon number must be >= 0, got {n}")
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(n * math.log(mu) - mu - math.lgamma(n + 1))


def poisson_tail_mass(n_max: int, mu: float) -> float:
    """P[N > n_max] for N ~ Poisson(mu).

    Summed directly from the tail side when the tail is the small part, so
    values far below double-precision epsilon are still resolved.
    """
    if mu < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mu}")
    if mu == 0.0:
        return 0.0
    if n_max + 1 > mu:
        # terms decrease monotonically from n_max + 1 onwards
        total = 0.0
        n = n_max + 1
        term = poisson_pmf(n, mu)
        while term > 0.0:
            total += term
            if term < total * 1e-18:
                break
            n += 1
            term *= mu / n
        return min(1.0, max(0.0, total))
    head = sum(poisson_pmf(n, mu) for n in range(n_max + 1))
    return min(1.0, max(0.0, 1.0 - head))


def binomial_cdf(k: int, n: int, p: float) -> float:
    """P[Bin(n, p) <= k] via the regularized incomplete beta identity."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    return float(betainc(n - k, k + 1, 1.0 - p))


def binomial_sf(k: int, n: int, p: float) -> float:
    """P[Bin(n, p) >= k]."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    return float(betainc(k, n - k + 1, p))


def _bisect(predicate, lo: float, hi: float, tol: float = BISECTION_TOL) -> tuple[float, float]:
    # predicate(lo) is False, predicate(hi) is True; shrink until hi - lo <= tol
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def binomial_bounds(successes: int, trials: int, epsilon: float) -> ConfidenceInterval:
    """Exact one-sided (Clopper-Pearson style) bounds on a binomial probability.

    ``upper`` is the smallest p with P[Bin(trials, p) <= successes] <= epsilon and
    ``lower`` the largest p with P[Bin(trials, p) >= successes] <= epsilon.

    Args:
        successes: observed count, ``0 <= successes <= trials``.
        trials: number of Bernoulli trials, at least 1.
        epsilon: per-side failure probability in (0, 0.5).
    """
    successes = int(successes)
    trials = int(trials)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes must be in [0, {trials}], got {successes}")
    if not 0.0 < epsilon < 0.5:
        raise ValueError(f"epsilon must be in (0, 0.5), got {epsilon}")

    p_hat = successes / trials

    if successes == trials:
        upper = 1.0
    elif successes == 0:
        # (1 - p)^trials = epsilon
        upper = -math.expm1(math.log(epsilon) / trials)
    else:
        # cdf is decreasing in p; bound lies above the point estimate
        _, upper = _bisect(lambda p: binomial_cdf(successes, trials, p) <= epsilon, p_hat, 1.0)

    if successes == 0:
        lower = 0.0
    elif successes == trials:
        # p^trials = epsilon
        lower = math.exp(math.log(epsilon) / trials)
    else:
        # sf is increasing in p; bound lies below the point estimate
        lower, _ = _bisect(lambda p: binomial_sf(successes, trials, p) > epsilon, 0.0, p_hat)

    return ConfidenceInterval(lower=lower, upper=upper, epsilon_per_side=epsilon)
