from __future__ import annotations

import math
from dataclasses import dataclass, field

from app.services.errors import DomainError

Z95 = 1.96


def binomial_halfwidth(rate: float, n: int) -> float:
    if n <= 0:
        return 0.0
    return Z95 * math.sqrt(max(rate * (1.0 - rate), 0.0) / n)


@dataclass(frozen=True)
class ErrorRates:
    empirical_far: float
    empirical_mdr: float
    trials_h0: int
    trials_h1: int
    ci_far: float
    ci_mdr: float
    seed: int
    threshold: float
    baseline_far: float = float("nan")
    baseline_mdr: float = float("nan")
    ci_baseline_far: float = float("nan")
    ci_baseline_mdr: float = float("nan")

    def __post_init__(self) -> None:
        for name in ("empirical_far", "empirical_mdr"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {value!r}")

    @classmethod
    def from_counts(
        cls,
        *,
        false_alarms: int,
        misses: int,
        trials_h0: int,
        trials_h1: int,
        seed: int,
        threshold: float,
        baseline_false_alarms: int | None = None,
        baseline_misses: int | None = None,
    ) -> ErrorRates:
        far = false_alarms / trials_h0
        mdr = misses / trials_h1
        extra: dict[str, float] = {}
        if baseline_false_alarms is not None and baseline_misses is not None:
            bfar = baseline_false_alarms / trials_h0
            bmdr = baseline_misses / trials_h1
            extra = {
                "baseline_far": bfar,
                "baseline_mdr": bmdr,
                "ci_baseline_far": binomial_halfwidth(bfar, trials_h0),
                "ci_baseline_mdr": binomial_halfwidth(bmdr, trials_h1),
            }
        return cls(
            empirical_far=far,
            empirical_mdr=mdr,
            trials_h0=trials_h0,
            trials_h1=trials_h1,
            ci_far=binomial_halfwidth(far, trials_h0),
            ci_mdr=binomial_halfwidth(mdr, trials_h1),
            seed=seed,
            threshold=threshold,
            **extra,
        )


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    pfa: float
    pd: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    provenance: str  # analytic|empirical
    fingerprint: str = ""
    seed: int | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.provenance not in {"analytic", "empirical"}:
            raise DomainError(f"unknown ROC provenance {self.provenance!r}")
        ts = [p.threshold for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DomainError("ROC thresholds must be strictly increasing")

    def pd_at_pfa(self, target_pfa: float) -> float:
        """Best detection probability among operating points with P_fa <= target."""
        eligible = [p.pd for p in self.points if p.pfa <= target_pfa]
        return max(eligible) if eligible else 0.0
