"""Built-in scenarios for the two recorded data sets (85 km and 100 km).

Channel parameters are frozen results of :func:`calibrate_channel` on the
targets below; ``tests/test_presets.py`` re-derives them. Background is the
3 counts/s total rate integrated over each timing window.
"""
from __future__ import annotations

from dataclasses import dataclass

from .calibration import CalibrationTarget
from .channel import ChannelModel
from .protocol import DecoyConfig

__all__ = ["DataSet", "DATA_SETS", "get", "names", "SEND_PROBABILITIES", "DETECTOR_EFFICIENCIES"]

SEND_PROBABILITIES = (0.831, 0.123, 0.046)
CLOCK_RATE = 2.5e6
DETECTOR_EFFICIENCIES = (0.33, 0.5)
BACKGROUND_RATE = 3.0  # counts/s


@dataclass(frozen=True)
class DataSet:
    name: str
    config: DecoyConfig
    channel: ChannelModel
    target: CalibrationTarget
    distances: tuple[float, ...]
    time_factors: tuple[float, ...]

    def uncalibrated_channel(self) -> ChannelModel:
        return ChannelModel(self.channel.fiber_length, self.channel.attenuation, self.channel.detector_efficiencies)


_DISTANCES = tuple(float(d) for d in range(0, 121))
# half-octave steps from 1/64 to 16 times the recorded duration; exactly 1.0 included
_TIME_FACTORS = tuple(float(2.0 ** (k / 2)) for k in range(-12, 9))

DATA_SETS = {
    "ds1-85km": DataSet(
        name="ds1-85km",
        config=DecoyConfig((0.487, 0.0639, 1.05e-3), SEND_PROBABILITIES, CLOCK_RATE, 351.0),
        channel=ChannelModel(
            fiber_length=85.0,
            detector_efficiencies=DETECTOR_EFFICIENCIES,
            background_yield=3.6e-07,
            visibility_error=0.03272138026880235,
            window_acceptance=0.18193028270322265,
        ),
        target=CalibrationTarget(sifted_bits=2.2e5, qber=0.033, background_rate=BACKGROUND_RATE, timing_window=120e-9),
        distances=_DISTANCES,
        time_factors=_TIME_FACTORS,
    ),
    "ds2-100km": DataSet(
        name="ds2-100km",
        config=DecoyConfig((0.297, 0.099, 2.75e-3), SEND_PROBABILITIES, CLOCK_RATE, 828.0),
        channel=ChannelModel(
            fiber_length=100.0,
            detector_efficiencies=DETECTOR_EFFICIENCIES,
            background_yield=6.6e-07,
            visibility_error=0.03862186111726476,
            window_acceptance=0.22498754709192306,
        ),
        target=CalibrationTarget(sifted_bits=1.9e5, qber=0.04, background_rate=BACKGROUND_RATE, timing_window=220e-9),
        distances=_DISTANCES,
        time_factors=_TIME_FACTORS,
    ),
}


def names() -> list[str]:
    return sorted(DATA_SETS)


def get(name: str) -> DataSet:
    try:
        return DATA_SETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(names())}") from None

