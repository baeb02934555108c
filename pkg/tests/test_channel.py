from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from app.services.channel import (
    ChannelParams,
    distance_noise_sigma,
    link_quality_linear,
    noise_power,
    pathloss_db,
    probe_processing_gain,
    thorp_absorption,
)
from app.services.errors import DomainError


def test_thorp_at_22_khz():
    assert thorp_absorption(22.0) == pytest.approx(4.8916, abs=1e-4)


def test_thorp_low_frequency_limit_is_constant_term():
    assert thorp_absorption(1e-6) == pytest.approx(0.003, abs=1e-9)


def test_thorp_matches_independent_evaluation_at_10_khz():
    f2 = 10.0**2
    expected = 0.11 * f2 / (1 + f2) + 44 * f2 / (4100 + f2) + 2.75e-4 * f2 + 0.003
    assert thorp_absorption(10.0) == pytest.approx(expected, rel=1e-12)


def test_thorp_is_vectorized():
    out = thorp_absorption(np.array([10.0, 22.0]))
    assert out.shape == (2,)
    assert out[1] > out[0]


@pytest.mark.parametrize("freq", [0.0, -3.0])
def test_thorp_rejects_non_positive_frequency(freq):
    with pytest.raises(DomainError):
        thorp_absorption(freq)


def test_pathloss_at_500_m():
    params = ChannelParams()
    assert pathloss_db(params, 500.0) == pytest.approx(42.93, abs=5e-3)


def test_pathloss_at_one_meter_is_absorption_only():
    params = ChannelParams()
    assert pathloss_db(params, 1.0) == pytest.approx(thorp_absorption(22.0) / 1000.0, rel=1e-12)


def test_pathloss_rejects_zero_distance():
    with pytest.raises(DomainError):
        pathloss_db(ChannelParams(), 0.0)


def test_sigma_shrinks_by_ten_for_twenty_db_more_link_quality():
    low = ChannelParams(link_quality_db=0.0)
    high = low.with_link_quality(20.0)
    assert distance_noise_sigma(high, 500.0) == pytest.approx(
        distance_noise_sigma(low, 500.0) / 10.0, rel=1e-12
    )


def test_sigma_grows_with_distance_and_is_vectorized():
    params = ChannelParams(processing_gain=probe_processing_gain(10_000.0, 8))
    sig = distance_noise_sigma(params, np.array([100.0, 500.0, 707.1]))
    assert sig.shape == (3,)
    assert np.all(np.diff(sig) > 0)
    # 10 kHz probe, 8 symbols, LQ 10 dB: sub-meter ranging at 500 m.
    assert 0.1 < sig[1] < 0.3


def test_probe_processing_gain_value():
    assert probe_processing_gain(10_000.0, 8) == pytest.approx(3.158e10, rel=1e-3)
    with pytest.raises(DomainError):
        probe_processing_gain(0.0, 8)


def test_link_quality_and_noise_power():
    params = ChannelParams(tx_power=100.0, link_quality_db=10.0)
    assert link_quality_linear(params) == pytest.approx(10.0)
    assert noise_power(params) == pytest.approx(10.0)


@pytest.mark.parametrize("field", ["freq_khz", "sound_speed", "tx_power", "processing_gain"])
def test_channel_params_reject_non_positive(field):
    with pytest.raises(DomainError):
        ChannelParams(**{field: 0.0})


def test_channel_params_reject_non_finite_link_quality():
    with pytest.raises(DomainError):
        ChannelParams(link_quality_db=math.inf)


def test_spreading_outside_range_warns_but_is_accepted(caplog):
    with caplog.at_level(logging.WARNING, logger="app.services.channel"):
        params = ChannelParams(spreading=2.5)
    assert params.spreading == 2.5
    assert "spreading factor" in caplog.text
