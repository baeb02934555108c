"""Underwater acoustic link model: Thorp absorption, pathloss and ToA ranging noise.

Frequencies are in kHz, absorption in dB/km, distances in meters. Every function
accepts a scalar or a numpy array of distances and returns the same shape.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from app.services.errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelParams:
    freq_khz: float = 22.0
    spreading: float = 1.5
    sound_speed: float = 1500.0
    tx_power: float = 100.0
    link_quality_db: float = 10.0
    # Stands in for the quadratic form s'C^-1 s of the ToA estimator.
    processing_gain: float = 1.0

    def __post_init__(self) -> None:
        for name in ("freq_khz", "sound_speed", "tx_power", "processing_gain"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")
        if not math.isfinite(self.link_quality_db):
            raise DomainError(f"link_quality_db must be finite, got {self.link_quality_db!r}")
        if not 1.0 <= self.spreading <= 2.0:
            logger.warning(
                "spreading factor %.3g outside [1, 2] (cylindrical..spherical); accepted as given",
                self.spreading,
            )

    def with_link_quality(self, lq_db: float) -> ChannelParams:
        return replace(self, link_quality_db=float(lq_db))


def probe_processing_gain(bandwidth_hz: float, probe_symbols: float) -> float:
    """Derivative energy (2*pi*B)^2 * N of a white probe sequence, in 1/s^2."""
    if bandwidth_hz <= 0 or probe_symbols <= 0:
        raise DomainError("bandwidth_hz and probe_symbols must be positive")
    return (2.0 * math.pi * bandwidth_hz) ** 2 * probe_symbols


def link_quality_linear(params: ChannelParams) -> float:
    return 10.0 ** (params.link_quality_db / 10.0)


def noise_power(params: ChannelParams) -> float:
    return params.tx_power / link_quality_linear(params)


def thorp_absorption(freq_khz):
    f = np.asarray(freq_khz, dtype=float)
    if np.any(~(f > 0)):
        raise DomainError(f"frequency must be positive, got {freq_khz!r}")
    f2 = f * f
    alpha = 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003
    return float(alpha) if alpha.ndim == 0 else alpha


def _checked_distance(dist_m) -> np.ndarray:
    d = np.asarray(dist_m, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("distance must be positive (transmitter colocated with a reference node?)")
    return d


def pathloss_db(params: ChannelParams, dist_m):
    d = _checked_distance(dist_m)
    pl = params.spreading * 10.0 * np.log10(d) + (d / 1000.0) * thorp_absorption(params.freq_khz)
    return float(pl) if pl.ndim == 0 else pl


def distance_noise_sigma(params: ChannelParams, dist_m):
    """Ranging standard deviation c*sqrt(PL / (4 * LQ * G)) in meters."""
    pl_linear = 10.0 ** (np.asarray(pathloss_db(params, dist_m)) / 10.0)
    denom = 4.0 * link_quality_linear(params) * params.processing_gain
    sigma = params.sound_speed * np.sqrt(pl_linear / denom)
    return float(sigma) if sigma.ndim == 0 else sigma
