import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decoyqkd.channel import (
    ChannelModel,
    attenuate_intensity,
    beamsplitter_single_fraction,
    enclave_channel,
    expected_gain_qber,
    expected_yields,
    transmittance,
)
from decoyqkd.stats import poisson_pmf


def test_transmittance_examples():
    assert transmittance(ChannelModel(0.0)) == 1.0
    assert transmittance(ChannelModel(100.0, attenuation=0.2)) == pytest.approx(0.01, rel=1e-12)
    ch = ChannelModel(50.0, attenuation=0.2, detector_efficiencies=(0.33, 0.5), window_acceptance=0.8)
    assert transmittance(ch) == pytest.approx(0.415 * 0.8 * 0.1, rel=1e-12)


def test_enclave_of_202km_link_is_100km_channel():
    ch = enclave_channel(202.0, 102.0, attenuation=0.2)
    assert ch.fiber_length == pytest.approx(100.0)
    assert transmittance(ch) == pytest.approx(transmittance(ChannelModel(100.0, attenuation=0.2)))
    # equivalently: the enclave fiber is part of Alice's attenuator
    assert attenuate_intensity(1.0, 102.0, 0.2) == pytest.approx(10 ** (-2.04))
    with pytest.raises(ValueError):
        enclave_channel(10.0, 11.0)


def test_yield_examples():
    c = expected_yields(ChannelModel(0.0, background_yield=0.2, visibility_error=0.01), 3)
    assert c.yields[0] == pytest.approx(0.2) and c.error_rates[0] == pytest.approx(0.5)
    # eta = 0.01, no background: y1 = 0.01, b1 = visibility error
    ch = ChannelModel(100.0, attenuation=0.2, visibility_error=0.03)
    c = expected_yields(ch, 2)
    assert c.yields[1] == pytest.approx(0.01) and c.error_rates[1] == pytest.approx(0.03)
    # eta = 0.5, y0 = 0.1: y2 = 1 - 0.9 * 0.25
    ch = ChannelModel(0.0, window_acceptance=0.5, background_yield=0.1)
    assert expected_yields(ch, 2).yields[2] == pytest.approx(0.775)
    assert expected_yields(ch, 2).n_max == 2
    with pytest.raises(ValueError):
        expected_yields(ch, 0)


def test_gain_qber_examples():
    q, e = expected_gain_qber(ChannelModel(10.0, background_yield=3e-4), 0.0)
    assert q == pytest.approx(3e-4) and e == pytest.approx(0.5, abs=1e-12)
    q, e = expected_gain_qber(ChannelModel(0.0, visibility_error=0.01), 0.487)
    assert e == pytest.approx(0.01)
    assert expected_gain_qber(ChannelModel(5.0), 0.0) == (0.0, 0.5)


@settings(max_examples=60, deadline=None)
@given(
    length=st.floats(0, 200),
    y0=st.floats(0, 1e-2),
    ev=st.floats(0, 0.2),
    mu=st.floats(1e-4, 1.0),
)
def test_gain_closed_form_matches_summation(length, y0, ev, mu):
    ch = ChannelModel(length, detector_efficiencies=(0.33, 0.5), background_yield=y0, visibility_error=ev)
    curve = expected_yields(ch, 40)
    pmf = np.array([poisson_pmf(n, mu) for n in range(41)])
    q, e = expected_gain_qber(ch, mu)
    assert q == pytest.approx(float(pmf @ curve.yields), abs=1e-10)
    assert q * e == pytest.approx(float(pmf @ (curve.yields * curve.error_rates)), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(length=st.floats(0, 150), y0=st.floats(0, 1e-3), ev=st.floats(0, 0.49))
def test_gain_increasing_and_qber_nonincreasing(length, y0, ev):
    ch = ChannelModel(length, background_yield=y0, visibility_error=ev)
    mus = np.linspace(0.01, 1.0, 25)
    qs, es = zip(*(expected_gain_qber(ch, m) for m in mus))
    assert all(b > a for a, b in zip(qs, qs[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(es, es[1:]))


@given(length=st.floats(0, 150), y0=st.floats(0, 0.5))
def test_yields_increase_to_one(length, y0):
    ch = ChannelModel(length, attenuation=0.05, background_yield=y0)
    y = expected_yields(ch, 400).yields
    assert np.all(np.diff(y) >= -1e-15)
    if transmittance(ch) > 0.02:
        assert y[-1] > 1 - 1e-3


def test_beamsplitter_fraction_low_mu_limit():
    ch = ChannelModel(30.0)
    assert beamsplitter_single_fraction(ch, 1e-6) == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(ValueError):
        beamsplitter_single_fraction(ch, 0.0)


def test_beamsplitter_fraction_definition():
    ch = ChannelModel(85.0, detector_efficiencies=(0.33, 0.5), background_yield=1e-6)
    mu = 0.487
    eta = transmittance(ch)
    y1 = 1 - (1 - 1e-6) * (1 - eta)
    q, _ = expected_gain_qber(ch, mu)
    assert beamsplitter_single_fraction(ch, mu) == pytest.approx(mu * math.exp(-mu) * y1 / q, rel=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"fiber_length": -1},
        {"fiber_length": 1, "attenuation": 0},
        {"fiber_length": 1, "background_yield": 1.5},
        {"fiber_length": 1, "visibility_error": -0.1},
        {"fiber_length": 1, "detector_efficiencies": (0.5,)},
        {"fiber_length": 1, "detector_efficiencies": (0.5, 1.2)},
        {"fiber_length": 1, "window_acceptance": 2},
    ],
)
def test_channel_validation(kwargs):
    with pytest.raises(ValueError):
        ChannelModel(**kwargs)


def test_channel_dict_round_trip():
    ch = ChannelModel(85.0, 0.21, (0.33, 0.5), 3.6e-7, 0.03, 0.18)
    assert ChannelModel.from_dict(ch.to_dict()) == ch
    assert ch.with_length(10.0).fiber_length == 10.0
