"""Position-fingerprint hypothesis test and the per-anchor distance baseline."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats

from app.services.errors import DomainError
from app.services.localization import DistanceMeasurement, LocalizationSystem


class Verdict(str, enum.Enum):
    LEGITIMATE = "H0"
    MALICIOUS = "H1"


@dataclass(frozen=True)
class AuthDecision:
    statistic: float
    threshold: float
    verdict: Verdict


@dataclass(frozen=True)
class LegitimateProfile:
    position: tuple[float, float]
    distances: tuple[float, ...]

    @classmethod
    def enroll(cls, system: LocalizationSystem, position) -> LegitimateProfile:
        x, y = (float(v) for v in position)
        d = system.distances_from((x, y))
        if np.any(d <= 0):
            raise DomainError("legitimate node is colocated with a reference node")
        return cls(position=(x, y), distances=tuple(float(v) for v in d))

    def check_against(self, system: LocalizationSystem) -> None:
        expected = system.distances_from(self.position)
        if len(self.distances) != len(expected) or not np.allclose(
            self.distances, expected, rtol=0, atol=1e-9
        ):
            raise DomainError("profile distances do not match its position and reference nodes")


def test_statistics(system: LocalizationSystem, profile: LegitimateProfile, est_pos) -> np.ndarray:
    """||A''(x_hat - x_A)||^2 for one estimate ([2]) or a batch ([n, 2])."""
    diff = np.asarray(est_pos, dtype=float) - np.asarray(profile.position)
    mapped = diff @ system.ts_operator.T
    return np.einsum("...i,...i->...", mapped, mapped)


def test_statistic(system: LocalizationSystem, profile: LegitimateProfile, est_pos) -> float:
    return float(test_statistics(system, profile, np.asarray(est_pos, dtype=float).reshape(2)))


# Pytest would otherwise collect the two helpers above as test functions.
test_statistics.__test__ = False  # type: ignore[attr-defined]
test_statistic.__test__ = False  # type: ignore[attr-defined]


def decide(statistic: float, threshold: float) -> AuthDecision:
    if threshold < 0:
        raise DomainError(f"threshold must be non-negative, got {threshold!r}")
    # A tie goes to H0.
    verdict = Verdict.MALICIOUS if statistic > threshold else Verdict.LEGITIMATE
    return AuthDecision(statistic=float(statistic), threshold=float(threshold), verdict=verdict)


def distance_baseline_statistic(
    profile: LegitimateProfile, meas: DistanceMeasurement, anchor_index: int
) -> float | np.ndarray:
    """|d_hat_i - d_i^A| for one anchor: a float for one measurement, shape [n] for a batch."""
    if not 0 <= anchor_index < len(profile.distances):
        raise DomainError(f"anchor index {anchor_index} out of range")
    value = np.abs(meas.estimated[..., anchor_index] - profile.distances[anchor_index])
    return float(value) if value.ndim == 0 else value


def distance_baseline_statistics(profile: LegitimateProfile, meas: DistanceMeasurement) -> np.ndarray:
    """|d_hat_i - d_i^A| for every anchor (vectorized over a batch)."""
    return np.abs(meas.estimated - np.asarray(profile.distances))


def baseline_far(sigmas, threshold: float) -> np.ndarray:
    """Per-anchor P(|N(0, sigma_i^2)| > eps)."""
    s = np.asarray(sigmas, dtype=float)
    return 2.0 * stats.norm.sf(threshold / s)


def baseline_mdr(
    profile: LegitimateProfile, attacker_distances, sigmas_e, threshold: float
) -> np.ndarray:
    """Per-anchor P(|N(delta_i, sigma_i^2)| <= eps), delta_i = d_i^E - d_i^A."""
    delta = np.abs(np.asarray(attacker_distances, dtype=float) - np.asarray(profile.distances))
    s = np.asarray(sigmas_e, dtype=float)
    return stats.foldnorm.cdf(threshold, delta / s, scale=s)
