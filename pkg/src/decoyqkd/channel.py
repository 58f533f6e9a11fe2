"""Analytic fiber + threshold-detector channel model."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .stats import poisson_pmf

__all__ = [
    "ChannelModel",
    "YieldErrorCurve",
    "DEFAULT_ATTENUATION",
    "transmittance",
    "fiber_transmission",
    "attenuate_intensity",
    "enclave_channel",
    "expected_yields",
    "expected_gain_qber",
    "beamsplitter_single_fraction",
]

DEFAULT_ATTENUATION = 0.21  # dB/km


@dataclass(frozen=True)
class ChannelModel:
    """Fiber link plus Bob's two-detector receiver.

    ``background_yield`` is the per-clock-cycle probability of at least one
    background or dark click inside the timing window. ``window_acceptance``
    collects every loss on Bob's side that is not fiber attenuation or detector
    efficiency (timing window, interferometer insertion loss).
    """

    fiber_length: float
    attenuation: float = DEFAULT_ATTENUATION
    detector_efficiencies: tuple[float, float] = (1.0, 1.0)
    background_yield: float = 0.0
    visibility_error: float = 0.0
    window_acceptance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "detector_efficiencies", tuple(float(e) for e in self.detector_efficiencies))
        if len(self.detector_efficiencies) != 2:
            raise ValueError("detector_efficiencies must hold exactly two values")
        if self.fiber_length < 0:
            raise ValueError(f"fiber_length must be >= 0, got {self.fiber_length}")
        if self.attenuation <= 0:
            raise ValueError(f"attenuation must be > 0, got {self.attenuation}")
        for name in ("background_yield", "visibility_error", "window_acceptance"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for e in self.detector_efficiencies:
            if not 0.0 <= e <= 1.0:
                raise ValueError(f"detector efficiency must be in [0, 1], got {e}")

    @property
    def photon_survival(self) -> float:
        """Probability that a photon reaches a detector input (before detector efficiency)."""
        return self.window_acceptance * fiber_transmission(self.fiber_length, self.attenuation)

    def with_length(self, fiber_length: float) -> "ChannelModel":
        return replace(self, fiber_length=fiber_length)

    def to_dict(self) -> dict:
        return {
            "fiber_length": self.fiber_length,
            "attenuation": self.attenuation,
            "detector_efficiencies": list(self.detector_efficiencies),
            "background_yield": self.background_yield,
            "visibility_error": self.visibility_error,
            "window_acceptance": self.window_acceptance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelModel":
        return cls(
            fiber_length=float(d["fiber_length"]),
            attenuation=float(d.get("attenuation", DEFAULT_ATTENUATION)),
            detector_efficiencies=tuple(d.get("detector_efficiencies", (1.0, 1.0))),
            background_yield=float(d.get("background_yield", 0.0)),
            visibility_error=float(d.get("visibility_error", 0.0)),
            window_acceptance=float(d.get("window_acceptance", 1.0)),
        )


@dataclass(frozen=True)
class YieldErrorCurve:
    yields: np.ndarray
    error_rates: np.ndarray

    @property
    def n_max(self) -> int:
        return len(self.yields) - 1


def fiber_transmission(length: float, attenuation: float) -> float:
    return 10.0 ** (-attenuation * length / 10.0)


def attenuate_intensity(mu: float, length: float, attenuation: float) -> float:
    """Mean photon number after ``length`` km of fiber."""
    return mu * fiber_transmission(length, attenuation)


def enclave_channel(link_length: float, enclave_length: float, **kwargs) -> ChannelModel:
    """Channel seen when the first ``enclave_length`` km of the link belong to Alice.

    The enclave fiber acts as part of Alice's attenuator, so only the
    remainder is analysed as the transmission channel.
    """
    if not 0.0 <= enclave_length <= link_length:
        raise ValueError("enclave_length must lie within the link")
    return ChannelModel(fiber_length=link_length - enclave_length, **kwargs)


def transmittance(model: ChannelModel) -> float:
    """Overall single-photon detection probability eta."""
    mean_eff = 0.5 * (model.detector_efficiencies[0] + model.detector_efficiencies[1])
    return mean_eff * model.photon_survival


def expected_yields(model: ChannelModel, n_max: int) -> YieldErrorCurve:
    """Per-photon-number detection probabilities y_n and error rates b_n."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    eta = transmittance(model)
    y0 = model.background_yield
    e_v = model.visibility_error
    n = np.arange(n_max + 1)
    miss = (1.0 - eta) ** n
    yields = 1.0 - (1.0 - y0) * miss
    err_clicks = 0.5 * y0 * miss + e_v * (yields - y0 * miss)
    with np.errstate(invalid="ignore", divide="ignore"):
        errors = np.where(yields > 0, err_clicks / np.where(yields > 0, yields, 1.0), 0.5)
    return YieldErrorCurve(yields=yields, error_rates=errors)


def expected_gain_qber(model: ChannelModel, mu: float) -> tuple[float, float]:
    """Gain Q_mu and error rate E_mu for a Poisson source of mean ``mu``.

    A zero gain leaves the error rate undefined; 0.5 is returned for it.
    """
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    eta = transmittance(model)
    y0 = model.background_yield
    no_signal = math.exp(-eta * mu)
    gain = 1.0 - (1.0 - y0) * no_signal
    if gain <= 0.0:
        return 0.0, 0.5
    # sum_n P(n) y0 (1-eta)^n = y0 exp(-eta mu)
    background_part = y0 * no_signal
    err = 0.5 * background_part + model.visibility_error * (gain - background_part)
    return gain, err / gain


def beamsplitter_single_fraction(model: ChannelModel, mu: float) -> float:
    """Fraction of detections from single-photon pulses under benign (random deletion) loss."""
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    gain, _ = expected_gain_qber(model, mu)
    if gain == 0.0:
        return 0.0
    y1 = 1.0 - (1.0 - model.background_yield) * (1.0 - transmittance(model))
    return poisson_pmf(1, mu) * y1 / gain
