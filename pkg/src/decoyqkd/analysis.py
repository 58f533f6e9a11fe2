"""Finite-statistics decoy-state analysis and secret-key-length accounting.

Convention used throughout: ``Y_j`` is the probability that a pulse sent at
intensity ``mu_j`` ends up as a sifted detection, and ``y_n`` is the same
probability for an n-photon pulse. The basis-match factor is therefore part
of every yield and never applied a second time.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .channel import ChannelModel, beamsplitter_single_fraction
from .lp import LinearProgram, solve_min
from .protocol import DecoyConfig, SessionTallies
from .stats import ConfidenceInterval, binary_entropy, binomial_bounds, poisson_pmf, poisson_tail_mass

__all__ = [
    "InconsistentObservations",
    "YieldBounds",
    "KeyResult",
    "AnalysisReport",
    "DEFAULT_N_MAX",
    "DEFAULT_F_EC",
    "detection_intervals",
    "build_yield_program",
    "bound_y1",
    "required_n_max",
    "single_photon_count",
    "bound_b1",
    "secret_key_length",
    "key_length_terms",
    "analyze",
    "beamsplitter_reference",
    "scaled_intensities",
    "sweep_distance",
    "sweep_time",
]

DEFAULT_N_MAX = 20
DEFAULT_F_EC = 1.10
MAX_TAIL = 1e-12
BOUNDS_PER_ANALYSIS = 6  # two one-sided bounds at each of three intensities


class InconsistentObservations(Exception):
    """No channel is consistent with the observed tallies at the chosen confidence."""


@dataclass(frozen=True)
class YieldBounds:
    detection_intervals: tuple[ConfidenceInterval, ...]
    y1_lower: float
    y0_interval: ConfidenceInterval
    n_max: int
    epsilon_budget: float


@dataclass(frozen=True)
class KeyResult:
    n_sift: int
    observed_qber: float
    zeros_fraction: float
    single_photon_bound: int
    b1_upper: float
    f_ec: float
    n_sec: int
    security_failure_probability: float
    raw_key_length: float
    clamped: bool


@dataclass(frozen=True)
class AnalysisReport:
    bounds: YieldBounds
    key: KeyResult
    duration: float
    intensities: tuple[float, ...]

    @property
    def secret_bit_rate(self) -> float:
        return self.key.n_sec / self.duration

    def to_flat_dict(self) -> dict:
        """Flat key/value view of every bound and key-length quantity."""
        out: dict = {}
        for j, iv in enumerate(self.bounds.detection_intervals):
            out[f"Y{j}_lower"] = iv.lower
            out[f"Y{j}_upper"] = iv.upper
        out["epsilon"] = self.bounds.detection_intervals[0].epsilon_per_side
        out["y1_lower"] = self.bounds.y1_lower
        out["y0_lower"] = self.bounds.y0_interval.lower
        out["y0_upper"] = self.bounds.y0_interval.upper
        out["n_max"] = self.bounds.n_max
        out["epsilon_budget"] = self.bounds.epsilon_budget
        for k, v in asdict(self.key).items():
            out[k] = v
        out["single_photon_fraction"] = (
            self.key.single_photon_bound / self.key.n_sift if self.key.n_sift else 0.0
        )
        out["duration"] = self.duration
        out["secret_bit_rate"] = self.secret_bit_rate
        for j, mu in enumerate(self.intensities):
            out[f"mu{j}"] = mu
        return out


def detection_intervals(tallies: SessionTallies, epsilon: float) -> list[ConfidenceInterval]:
    """Exact bounds on each level's sifted detection probability per sent pulse."""
    out = []
    for j in range(tallies.levels):
        sent = tallies.pulses_sent[j]
        if sent <= 0:
            raise ValueError(f"no pulses were sent at intensity level {j}")
        out.append(binomial_bounds(tallies.sifted_detections[j], sent, epsilon))
    return out


def required_n_max(mu: float, floor: int = DEFAULT_N_MAX) -> int:
    """Smallest truncation >= ``floor`` whose Poisson tail at ``mu`` is within MAX_TAIL."""
    n = floor
    while poisson_tail_mass(n, mu) > MAX_TAIL:
        n += 1
    return n


def build_yield_program(
    intervals: Sequence[ConfidenceInterval],
    intensities: Sequence[float],
    n_max: int = DEFAULT_N_MAX,
) -> LinearProgram:
    """Minimise y_1 over yields y_0..y_n_max in [0, 1] consistent with every interval.

    Photon numbers above ``n_max`` are relaxed soundly: their yields count as
    1 against the lower bound and as 0 against the upper bound.
    """
    if len(intervals) != len(intensities):
        raise ValueError("one interval per intensity is required")
    n = np.arange(n_max + 1)
    constraints = []
    for iv, mu in zip(intervals, intensities):
        tail = poisson_tail_mass(n_max, mu)
        if tail > MAX_TAIL:
            raise ValueError(f"n_max = {n_max} leaves Poisson tail {tail:.2e} at mu = {mu}")
        coeffs = np.array([poisson_pmf(int(k), mu) for k in n])
        constraints.append((coeffs, iv.lower - tail, iv.upper))
    objective = np.zeros(n_max + 1)
    objective[1] = 1.0
    return LinearProgram(objective, constraints, [(0.0, 1.0)] * (n_max + 1))


def bound_y1(program: LinearProgram) -> float:
    """Lower bound on the single-photon yield; raises if the data admit no channel."""
    res = solve_min(program)
    if res.status == "infeasible":
        raise InconsistentObservations("observations are inconsistent at the chosen confidence")
    if not res.optimal:
        raise RuntimeError(f"yield program returned status {res.status}")
    return min(1.0, max(0.0, res.value))


def single_photon_count(y1_lower: float, mu0: float, pulses_sent_mu0: int, sift_factor: float = 1.0) -> int:
    """Lower bound s on sifted bits that left Alice as single photons.

    ``sift_factor`` only applies when ``y1_lower`` was estimated before
    sifting; with sifted yields (the convention here) it stays 1.
    """
    if y1_lower < 0 or mu0 < 0 or pulses_sent_mu0 < 0:
        raise ValueError("inputs must be non-negative")
    return int(math.floor(y1_lower * poisson_pmf(1, mu0) * pulses_sent_mu0 * sift_factor))


def bound_b1(errors_mu0: int, s: int) -> float:
    """Single-photon error rate bound with every observed error charged to single photons."""
    if s <= 0:
        return 1.0
    return min(1.0, errors_mu0 / s)


def key_length_terms(s, b1_upper, n_sift, f_ec, qber, z, leaked_bits=None) -> dict:
    """The individual terms of the key-length equation."""
    # past 0.5 the entropy would fall again; no single-photon credit is possible there
    credit = 0.0 if b1_upper >= 0.5 else s * (1.0 - binary_entropy(b1_upper))
    if leaked_bits is None:
        ec = n_sift * f_ec * binary_entropy(qber)
    else:
        ec = float(leaked_bits)
    bias = n_sift * (1.0 - binary_entropy(z))
    return {"single_photon_credit": credit, "error_correction": ec, "bias": bias, "raw": credit - ec - bias}


def secret_key_length(s, b1_upper, n_sift, f_ec, qber, z, leaked_bits=None) -> int:
    """N_sec = s[1 - H2(b1+)] - N_sift[f_ec H2(B) + 1 - H2(z)], floored and clamped at 0.

    When ``leaked_bits`` is given it replaces ``N_sift * f_ec * H2(B)``.
    """
    raw = key_length_terms(s, b1_upper, n_sift, f_ec, qber, z, leaked_bits)["raw"]
    return max(0, int(math.floor(raw)))


def _y0_interval(intervals, intensities, epsilon) -> ConfidenceInterval:
    # vacuum-level interval divided out to background; informational only
    j = int(np.argmin(intensities))
    iv = intervals[j]
    return ConfidenceInterval(iv.lower, min(1.0, iv.upper * math.exp(intensities[j])), epsilon)


def analyze(
    tallies: SessionTallies,
    config: DecoyConfig,
    f_ec: float = DEFAULT_F_EC,
    leaked_bits: int | None = None,
    n_max: int = DEFAULT_N_MAX,
    intensities: Sequence[float] | None = None,
    zeros_fraction: float | None = None,
) -> AnalysisReport:
    """Full security analysis of one session; key bits come from level 0.

    ``leaked_bits`` (from an actual reconciliation) overrides ``f_ec`` in the
    key-length equation and the reported efficiency is derived from it.
    ``intensities`` overrides the configured ones (enclave redefinition).
    """
    mus = tuple(intensities if intensities is not None else config.intensities)
    eps = config.epsilon
    intervals = detection_intervals(tallies, eps)
    program = build_yield_program(intervals, mus, n_max)
    y1 = bound_y1(program)

    n_sift = tallies.sifted_detections[0]
    errors = tallies.sifted_errors[0]
    qber = errors / n_sift if n_sift else 0.0
    z = tallies.zeros_fraction(0) if zeros_fraction is None else zeros_fraction
    s = min(single_photon_count(y1, mus[0], tallies.pulses_sent[0]), n_sift)
    b1 = bound_b1(errors, s)
    if leaked_bits is not None and n_sift and 0 < qber < 0.5:
        f_used = leaked_bits / (n_sift * binary_entropy(qber))
    else:
        f_used = f_ec
    terms = key_length_terms(s, b1, n_sift, f_ec, qber, z, leaked_bits)
    n_sec = max(0, int(math.floor(terms["raw"])))

    bounds = YieldBounds(
        detection_intervals=tuple(intervals),
        y1_lower=y1,
        y0_interval=_y0_interval(intervals, mus, eps),
        n_max=n_max,
        epsilon_budget=BOUNDS_PER_ANALYSIS * eps,
    )
    key = KeyResult(
        n_sift=n_sift,
        observed_qber=qber,
        zeros_fraction=z,
        single_photon_bound=s,
        b1_upper=b1,
        f_ec=f_used,
        n_sec=n_sec,
        security_failure_probability=BOUNDS_PER_ANALYSIS * eps,
        raw_key_length=terms["raw"],
        clamped=terms["raw"] < 0,
    )
    duration = tallies.clock_cycles / config.clock_rate
    return AnalysisReport(bounds=bounds, key=key, duration=duration, intensities=mus)


def beamsplitter_reference(
    tallies: SessionTallies,
    channel: ChannelModel,
    mu0: float,
    f_ec: float = DEFAULT_F_EC,
) -> tuple[float, int]:
    """Key length if loss were benign: the beamsplitter single-photon fraction replaces s / N_sift.

    Returns ``(fraction, key_bits)``.
    """
    frac = beamsplitter_single_fraction(channel, mu0)
    n_sift = tallies.sifted_detections[0]
    s = int(math.floor(frac * n_sift))
    errors = tallies.sifted_errors[0]
    qber = errors / n_sift if n_sift else 0.0
    bits = secret_key_length(s, bound_b1(errors, s), n_sift, f_ec, qber, tallies.zeros_fraction(0))
    return frac, bits


def scaled_intensities(intensities: Sequence[float], enclave_extension: float, attenuation: float) -> tuple[float, ...]:
    """Intensities at the new enclave exit after moving it ``enclave_extension`` km down the fiber."""
    factor = 10.0 ** (-attenuation * enclave_extension / 10.0)
    return tuple(mu * factor for mu in intensities)


def _sweep_row(x, report: AnalysisReport | None, duration: float) -> dict:
    if report is None:
        return {"x": x, "y1_lower": 0.0, "b1_upper": 1.0, "n_sec": 0, "rate_bps": 0.0}
    return {
        "x": x,
        "y1_lower": report.bounds.y1_lower,
        "b1_upper": report.key.b1_upper,
        "n_sec": report.key.n_sec,
        "rate_bps": report.key.n_sec / duration,
    }


def sweep_distance(
    tallies: SessionTallies,
    config: DecoyConfig,
    attenuation: float,
    base_distance: float,
    distances: Sequence[float],
    f_ec: float = DEFAULT_F_EC,
    n_max: int = DEFAULT_N_MAX,
) -> list[dict]:
    """Re-analyse one recorded session at other link lengths.

    A shorter distance ``d`` places ``base_distance - d`` km of fiber inside
    Alice's enclave; her declared intensities drop accordingly while the
    recorded tallies stay the same. Longer distances move the boundary the
    other way.
    """
    rows = []
    duration = tallies.clock_cycles / config.clock_rate
    for d in distances:
        mus = scaled_intensities(config.intensities, base_distance - d, attenuation)
        try:
            report = analyze(tallies, config, f_ec=f_ec, n_max=required_n_max(mus[0], n_max), intensities=mus)
        except InconsistentObservations:
            report = None
        rows.append(_sweep_row(float(d), report, duration))
    return rows


def sweep_time(
    tallies: SessionTallies,
    config: DecoyConfig,
    time_factors: Sequence[float],
    f_ec: float = DEFAULT_F_EC,
    n_max: int = DEFAULT_N_MAX,
) -> list[dict]:
    """Analysis of the same stationary channel observed for longer or shorter times."""
    rows = []
    base_duration = tallies.clock_cycles / config.clock_rate
    for factor in time_factors:
        scaled = tallies if factor == 1 else tallies.scaled(factor)
        cfg = replace(config, duration=config.duration * factor)
        try:
            report = analyze(scaled, cfg, f_ec=f_ec, n_max=n_max)
        except InconsistentObservations:
            report = None
        rows.append(_sweep_row(base_duration * factor, report, base_duration * factor))
    return rows
