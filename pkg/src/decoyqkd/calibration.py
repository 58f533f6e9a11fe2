"""Fit the free channel parameters to reported session observables.

Fiber attenuation and detector efficiencies are taken as given. The
background per clock cycle is either fixed from a measured count rate and
timing window, or fitted to a reported single-photon fraction. The other two
parameters are then fitted on the expected (noise-free) session:

* ``window_acceptance`` reproduces the number of sifted bits at mu_0;
* ``visibility_error`` reproduces the observed error rate at mu_0.

When fitting to a fraction, background is capped where it alone would explain
the whole error rate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from scipy.optimize import brentq

from .analysis import DEFAULT_N_MAX, analyze
from .channel import ChannelModel
from .protocol import DecoyConfig, expected_counts, expected_tallies

__all__ = ["CalibrationTarget", "fit_window_acceptance", "fit_visibility_error", "calibrate_channel"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationTarget:
    sifted_bits: float
    qber: float
    background_rate: float | None = None  # counts/s, all detectors
    timing_window: float | None = None  # s
    single_photon_fraction: float | None = None

    def __post_init__(self):
        if (self.background_rate is None) != (self.timing_window is None):
            raise ValueError("background_rate and timing_window go together")
        if self.background_rate is not None and self.single_photon_fraction is not None:
            raise ValueError("give either a background rate or a fraction target, not both")

    @property
    def background_yield(self) -> float | None:
        if self.background_rate is None:
            return None
        return self.background_rate * self.timing_window


def fit_window_acceptance(config: DecoyConfig, channel: ChannelModel, sifted_bits: float) -> ChannelModel:
    def resid(w):
        return expected_counts(config, replace(channel, window_acceptance=w))["sifted_detections"][0] - sifted_bits

    if resid(1.0) < 0:
        raise ValueError("sifted count is unreachable even with unit window acceptance")
    return replace(channel, window_acceptance=brentq(resid, 1e-12, 1.0, xtol=1e-14, rtol=1e-12))


def _qber(config, channel) -> float:
    e = expected_counts(config, channel)
    return e["sifted_errors"][0] / e["sifted_detections"][0]


def fit_visibility_error(config: DecoyConfig, channel: ChannelModel, qber: float) -> ChannelModel:
    """Visibility error giving ``qber`` at mu_0; zero if background already explains more."""
    lo = replace(channel, visibility_error=0.0)
    if _qber(config, lo) >= qber:
        return lo
    v = brentq(lambda v: _qber(config, replace(channel, visibility_error=v)) - qber, 0.0, 0.5, xtol=1e-14)
    return replace(channel, visibility_error=v)


def _fit_inner(config, channel, target: CalibrationTarget) -> ChannelModel:
    ch = fit_window_acceptance(config, channel, target.sifted_bits)
    return fit_visibility_error(config, ch, target.qber)


def _fraction(config, channel, n_max) -> float:
    rep = analyze(expected_tallies(config, channel), config, n_max=n_max)
    return rep.key.single_photon_bound / rep.key.n_sift


def _background_cap(config, channel, target) -> float:
    # largest background for which a non-negative visibility error still fits the error rate
    def excess(y0):
        ch = fit_window_acceptance(config, replace(channel, background_yield=y0, visibility_error=0.0), target.sifted_bits)
        return _qber(config, ch) - target.qber

    hi = 1e-6
    while excess(hi) < 0 and hi < 0.1:
        hi *= 2
    if excess(hi) < 0:
        return hi
    return brentq(excess, 0.0, hi, xtol=1e-12)


def calibrate_channel(
    config: DecoyConfig,
    channel: ChannelModel,
    target: CalibrationTarget,
    n_max: int = DEFAULT_N_MAX,
) -> ChannelModel:
    """Return ``channel`` with its free parameters fitted to ``target``."""
    if target.background_yield is not None:
        channel = replace(channel, background_yield=target.background_yield)
    if target.single_photon_fraction is None:
        return _fit_inner(config, channel, target)

    def resid(y0):
        ch = _fit_inner(config, replace(channel, background_yield=y0), target)
        return _fraction(config, ch, n_max) - target.single_photon_fraction

    cap = _background_cap(config, channel, target)
    if resid(0.0) <= 0:
        logger.warning("single-photon fraction already below target without background")
        return _fit_inner(config, replace(channel, background_yield=0.0), target)
    if resid(cap) > 0:
        logger.warning("background capped at %.3g by the error rate; fraction target not reached", cap)
        return _fit_inner(config, replace(channel, background_yield=cap), target)
    y0 = brentq(resid, 0.0, cap, xtol=1e-10)
    return _fit_inner(config, replace(channel, background_yield=y0), target)
