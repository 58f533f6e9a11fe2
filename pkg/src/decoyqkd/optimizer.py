"""Choose intensities and send probabilities for the best predicted secret bit rate.

The objective is deterministic: expected tallies for a configuration are
analysed exactly as a recorded session would be. Its landscape has flat zero
regions and floor steps, so the search is a coarse grid followed by a
coordinate pattern search with shrinking steps rather than anything
gradient-based.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analysis import DEFAULT_F_EC, DEFAULT_N_MAX, InconsistentObservations, analyze
from .channel import ChannelModel
from .protocol import EXTINCTION_LIMIT, DecoyConfig, expected_tallies

__all__ = ["SearchBox", "OptimizationResult", "ZeroRateLandscape", "predict_rate", "optimize", "write_trace_csv"]

_PARAMS = ("mu0", "mu1", "p0", "p1")
MIN_P2 = 0.005


class ZeroRateLandscape(RuntimeError):
    """No evaluated configuration gives a positive secret bit rate."""

    def __init__(self, evaluations: int, trace):
        super().__init__(f"all {evaluations} evaluated configurations give zero secret rate")
        self.trace = trace


@dataclass(frozen=True)
class SearchBox:
    mu0: tuple[float, float] = (0.05, 0.9)
    mu1: tuple[float, float] = (0.01, 0.5)
    p0: tuple[float, float] = (0.4, 0.95)
    p1: tuple[float, float] = (0.02, 0.5)
    extinction_ratio: float = EXTINCTION_LIMIT

    def __post_init__(self):
        for name in _PARAMS:
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} range must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if self.p0[0] + self.p1[0] >= 1 - MIN_P2:
            raise ValueError("probability ranges leave no room for the vacuum level")
        if self.mu1[0] >= self.mu0[1]:
            raise ValueError("mu1 range lies entirely above the mu0 range")
        if not 0 <= self.extinction_ratio <= EXTINCTION_LIMIT:
            raise ValueError(f"extinction_ratio must lie in [0, {EXTINCTION_LIMIT}]")

    def admits(self, point: Sequence[float]) -> bool:
        mu0, mu1, p0, p1 = point
        inside = all(getattr(self, n)[0] - 1e-12 <= v <= getattr(self, n)[1] + 1e-12 for n, v in zip(_PARAMS, point))
        return inside and mu1 < mu0 and mu1 > self.extinction_ratio * mu0 and p0 + p1 <= 1 - MIN_P2


@dataclass
class OptimizationResult:
    best_config: DecoyConfig
    predicted_rate: float
    evaluations: int
    search_trace: list[tuple[DecoyConfig, float]] = field(repr=False, default_factory=list)
    coarse_best_rate: float = 0.0


def predict_rate(
    config: DecoyConfig,
    channel: ChannelModel,
    f_ec: float = DEFAULT_F_EC,
    n_max: int = DEFAULT_N_MAX,
) -> float:
    """Secret bits per second for the expected (noise-free) session."""
    tallies = expected_tallies(config, channel)
    if tallies.sifted_detections[0] == 0:
        return 0.0
    try:
        report = analyze(tallies, config, f_ec=f_ec, n_max=n_max)
    except InconsistentObservations:
        return 0.0
    return report.secret_bit_rate


def _config(point, box: SearchBox, clock_rate, duration, epsilon) -> DecoyConfig:
    mu0, mu1, p0, p1 = point
    return DecoyConfig(
        (mu0, mu1, box.extinction_ratio * mu0),
        (p0, p1, 1.0 - p0 - p1),
        clock_rate,
        duration,
        epsilon,
    )


def _better(a: tuple, b: tuple | None) -> bool:
    # (rate, point): higher rate wins, ties go to the lexicographically smaller point
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    return a[1] < b[1]


def optimize(
    channel: ChannelModel,
    duration: float,
    epsilon: float = 1e-7,
    clock_rate: float = 2.5e6,
    box: SearchBox | None = None,
    grid_points: int = 6,
    min_step: float = 1e-3,
    f_ec: float = DEFAULT_F_EC,
    n_max: int = DEFAULT_N_MAX,
) -> OptimizationResult:
    """Grid search over (mu0, mu1, p0, p1), then local coordinate refinement.

    mu2 is pinned to ``box.extinction_ratio * mu0``. Raises
    :class:`ZeroRateLandscape` if nothing evaluated yields a positive rate.
    """
    box = box or SearchBox()
    cache: dict[tuple, float] = {}
    trace: list[tuple[DecoyConfig, float]] = []

    def evaluate(point) -> float:
        key = tuple(round(v, 12) for v in point)
        if key not in cache:
            cfg = _config(key, box, clock_rate, duration, epsilon)
            cache[key] = predict_rate(cfg, channel, f_ec=f_ec, n_max=n_max)
            trace.append((cfg, cache[key]))
        return cache[key]

    axes = [np.linspace(*getattr(box, n), grid_points) for n in _PARAMS]
    best = None
    for point in itertools.product(*axes):
        point = tuple(float(v) for v in point)
        if box.admits(point):
            cand = (evaluate(point), point)
            if _better(cand, best):
                best = cand
    if best is None:
        raise ValueError("search box contains no valid configuration")
    coarse_rate = best[0]
    if coarse_rate <= 0:
        raise ZeroRateLandscape(len(trace), trace)

    steps = [(getattr(box, n)[1] - getattr(box, n)[0]) / max(grid_points - 1, 1) / 2 for n in _PARAMS]
    while max(steps) >= min_step:
        improved = False
        for i in range(len(_PARAMS)):
            for sign in (1.0, -1.0):
                point = list(best[1])
                point[i] += sign * steps[i]
                point = tuple(point)
                if not box.admits(point):
                    continue
                cand = (evaluate(point), point)
                if _better(cand, best) and cand[0] > best[0]:
                    best, improved = cand, True
        if not improved:
            steps = [s / 2 for s in steps]

    cfg = _config(tuple(round(v, 12) for v in best[1]), box, clock_rate, duration, epsilon)
    return OptimizationResult(
        best_config=cfg,
        predicted_rate=best[0],
        evaluations=len(trace),
        search_trace=trace,
        coarse_best_rate=coarse_rate,
    )


def write_trace_csv(trace: Sequence[tuple[DecoyConfig, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu0", "mu1", "mu2", "p0", "p1", "p2", "rate_bps"])
        for cfg, rate in trace:
            w.writerow([*(repr(v) for v in cfg.intensities), *(repr(v) for v in cfg.send_probabilities), repr(rate)])
