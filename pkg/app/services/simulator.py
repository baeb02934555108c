"""Seeded Monte Carlo engine for the position fingerprint and the distance baseline.

Trials are split into fixed-size chunks. Every chunk draws from its own Philox stream
keyed by (seed, stream, chunk), so the counts only depend on the seed and the chunk
size, never on how many worker threads run the chunks.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from app.models.results import ErrorRates, RocCurve, RocPoint
from app.services.authenticator import (
    LegitimateProfile,
    distance_baseline_statistics,
    test_statistics,
)
from app.services.channel import ChannelParams
from app.services.errors import DomainError
from app.services.localization import (
    LocalizationSystem,
    build_b_vector,
    measure_distances_batch,
    solve_positions,
)
from app.settings import settings

logger = logging.getLogger(__name__)

STREAM_H0 = 0
STREAM_H1_NOISE = 1
STREAM_PLACEMENT = 2
SWEEP_STREAM = 7

SWEEP_AXES = ("link_quality_db", "radius_R", "threshold")
ATTACKER_KINDS = ("fixed", "box", "circle")


@dataclass(frozen=True)
class AttackerModel:
    """Where the malicious node transmits from, relative to the legitimate node."""

    kind: str
    position: tuple[float, float] | None = None
    extent: float = 500.0
    radius: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ATTACKER_KINDS:
            raise DomainError(f"unknown attacker model {self.kind!r}; expected one of {ATTACKER_KINDS}")
        if self.kind == "fixed":
            if self.position is None:
                raise DomainError("fixed attacker needs a position")
            object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        if self.kind == "box" and not self.extent > 0:
            raise DomainError(f"box extent must be positive, got {self.extent!r}")
        if self.kind == "circle" and not self.radius > 0:
            raise DomainError(f"circle radius must be positive, got {self.radius!r}")

    @classmethod
    def fixed(cls, x: float, y: float) -> AttackerModel:
        return cls(kind="fixed", position=(float(x), float(y)))

    @classmethod
    def box(cls, extent: float) -> AttackerModel:
        return cls(kind="box", extent=float(extent))

    @classmethod
    def circle(cls, radius: float) -> AttackerModel:
        return cls(kind="circle", radius=float(radius))

    def sample(self, center, n: int, rng: np.random.Generator) -> np.ndarray:
        c = np.asarray(center, dtype=float)
        if self.kind == "fixed":
            return np.broadcast_to(np.asarray(self.position), (n, 2)).copy()
        if self.kind == "box":
            return c + rng.uniform(-self.extent, self.extent, size=(n, 2))
        angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return c + self.radius * np.column_stack([np.cos(angle), np.sin(angle)])

    def quadrature_points(self, center, resolution: int) -> np.ndarray:
        """Deterministic positions whose plain average approximates the attacker law."""
        c = np.asarray(center, dtype=float)
        if self.kind == "fixed":
            return np.asarray([self.position])
        if self.kind == "circle":
            angle = np.arange(2 * resolution) * (math.pi / resolution)
            return c + self.radius * np.column_stack([np.cos(angle), np.sin(angle)])
        step = 2.0 * self.extent / resolution
        mids = -self.extent + step * (np.arange(resolution) + 0.5)
        gx, gy = np.meshgrid(mids, mids, indexing="ij")
        return c + np.column_stack([gx.ravel(), gy.ravel()])

    def as_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "position": list(self.position)}
        if self.kind == "box":
            return {"kind": "box", "extent": self.extent}
        return {"kind": "circle", "radius": self.radius}


@dataclass(frozen=True)
class Scenario:
    channel: ChannelParams
    system: LocalizationSystem
    legitimate: LegitimateProfile
    attacker: AttackerModel
    threshold: float
    trials: int
    seed: int
    baseline_threshold: float = 1.0
    sigma_override: float | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if not self.threshold >= 0 or not self.baseline_threshold >= 0:
            raise DomainError("thresholds must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        self.legitimate.check_against(self.system)

    @property
    def fingerprint(self) -> str:
        payload = {
            "channel": asdict(self.channel),
            "anchors": [list(a) for a in self.system.nodes.anchors],
            "legitimate": list(self.legitimate.position),
            "attacker": self.attacker.as_dict(),
            "threshold": self.threshold,
            "baseline_threshold": self.baseline_threshold,
            "sigma_override": self.sigma_override,
            "trials": self.trials,
            "seed": self.seed,
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.md5(canonical.encode("utf-8")).hexdigest()

    def with_updates(self, **changes) -> Scenario:
        return replace(self, **changes)


def stream(seed: int, stream_id: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id, chunk))
    return np.random.Generator(np.random.Philox(ss))


def derive_subseed(master: int, index: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(SWEEP_STREAM, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _chunks(trials: int) -> list[tuple[int, int]]:
    size = settings.chunk_size
    return [(i, min(size, trials - start)) for i, start in enumerate(range(0, trials, size))]


def _simulate_chunk(
    scenario: Scenario, malicious: bool, chunk: int, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """TS samples [n] and per-anchor baseline statistics [n, L] for one chunk."""
    legit = np.asarray(scenario.legitimate.position)
    if malicious:
        positions = scenario.attacker.sample(legit, n, stream(scenario.seed, STREAM_PLACEMENT, chunk))
        rng = stream(scenario.seed, STREAM_H1_NOISE, chunk)
    else:
        positions = np.broadcast_to(legit, (n, 2))
        rng = stream(scenario.seed, STREAM_H0, chunk)
    meas = measure_distances_batch(
        scenario.system, scenario.channel, positions, rng, scenario.sigma_override
    )
    est = solve_positions(scenario.system, build_b_vector(scenario.system, meas))
    ts = test_statistics(scenario.system, scenario.legitimate, est)
    baseline = distance_baseline_statistics(scenario.legitimate, meas)
    return ts, baseline


def _map_chunks(fn, items: list, workers: int | None):
    n_workers = settings.workers if workers is None else workers
    if n_workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_trials(scenario: Scenario, workers: int | None = None) -> ErrorRates:
    chunks = _chunks(scenario.trials)
    eps = scenario.threshold
    eps_b = scenario.baseline_threshold

    def h0(item: tuple[int, int]) -> tuple[int, np.ndarray]:
        ts, base = _simulate_chunk(scenario, False, *item)
        return int(np.count_nonzero(ts > eps)), np.count_nonzero(base > eps_b, axis=0)

    def h1(item: tuple[int, int]) -> tuple[int, np.ndarray]:
        ts, base = _simulate_chunk(scenario, True, *item)
        return int(np.count_nonzero(ts <= eps)), np.count_nonzero(base <= eps_b, axis=0)

    h0_parts = _map_chunks(h0, chunks, workers)
    h1_parts = _map_chunks(h1, chunks, workers)
    false_alarms = sum(p[0] for p in h0_parts)
    misses = sum(p[0] for p in h1_parts)
    # Per-anchor baseline counts; the best single anchor is reported.
    base_fa = np.sum([p[1] for p in h0_parts], axis=0)
    base_miss = np.sum([p[1] for p in h1_parts], axis=0)

    rates = ErrorRates.from_counts(
        false_alarms=false_alarms,
        misses=misses,
        trials_h0=scenario.trials,
        trials_h1=scenario.trials,
        seed=scenario.seed,
        threshold=eps,
        baseline_false_alarms=int(base_fa.min()),
        baseline_misses=int(base_miss.min()),
    )
    logger.info(
        "trials=%d chunks=%d far=%.6g mdr=%.6g seed=%d",
        scenario.trials,
        len(chunks),
        rates.empirical_far,
        rates.empirical_mdr,
        scenario.seed,
    )
    return rates


def sample_statistics(scenario: Scenario, workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    chunks = _chunks(scenario.trials)
    h0 = _map_chunks(lambda item: _simulate_chunk(scenario, False, *item)[0], chunks, workers)
    h1 = _map_chunks(lambda item: _simulate_chunk(scenario, True, *item)[0], chunks, workers)
    return np.concatenate(h0), np.concatenate(h1)


def apply_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    if axis == "link_quality_db":
        return scenario.with_updates(channel=scenario.channel.with_link_quality(value))
    if axis == "radius_R":
        if scenario.attacker.kind != "circle":
            raise DomainError("radius_R sweeps need a circle attacker model")
        return scenario.with_updates(attacker=AttackerModel.circle(value))
    if axis == "threshold":
        return scenario.with_updates(threshold=float(value))
    raise DomainError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep_scenarios(template: Scenario, axis: str, values: Sequence[float]) -> list[Scenario]:
    vals = [float(v) for v in values]
    if not vals:
        raise DomainError("sweep values are empty")
    if not all(math.isfinite(v) for v in vals):
        raise DomainError(f"sweep values must be finite, got {vals}")
    return [
        apply_axis(template, axis, v).with_updates(seed=derive_subseed(template.seed, i))
        for i, v in enumerate(vals)
    ]


def sweep(
    template: Scenario, axis: str, values: Sequence[float], workers: int | None = None
) -> list[ErrorRates]:
    out = []
    for scenario, value in zip(sweep_scenarios(template, axis, values), values):
        logger.info("sweep %s=%g", axis, value)
        out.append(run_trials(scenario, workers))
    return out


def empirical_roc(
    template: Scenario, threshold_grid: Sequence[float], workers: int | None = None
) -> RocCurve:
    grid = np.asarray([float(v) for v in threshold_grid])
    if grid.size == 0:
        raise DomainError("threshold grid is empty")
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise DomainError("threshold grid must be non-negative and strictly increasing")

    ts0, ts1 = sample_statistics(template, workers)
    ts0.sort()
    ts1.sort()
    above0 = ts0.size - np.searchsorted(ts0, grid, side="right")
    above1 = ts1.size - np.searchsorted(ts1, grid, side="right")
    points = tuple(
        RocPoint(threshold=float(eps), pfa=int(a0) / ts0.size, pd=int(a1) / ts1.size)
        for eps, a0, a1 in zip(grid, above0, above1)
    )
    return RocCurve(
        points=points,
        provenance="empirical",
        fingerprint=template.fingerprint,
        seed=template.seed,
        metadata={"trials": template.trials},
    )


def crossover_radius(
    radii: Sequence[float], mdr_high_lq: Sequence[float], mdr_low_lq: Sequence[float]
) -> float | None:
    """First radius where the high-LQ MDR falls back to or below the low-LQ MDR.

    Only counts once the high-LQ MDR has exceeded the low-LQ MDR at a smaller radius.
    """
    if not len(radii) == len(mdr_high_lq) == len(mdr_low_lq):
        raise DomainError("radii and MDR sequences must have equal length")
    anomaly = False
    for r, hi, lo in sorted(zip(radii, mdr_high_lq, mdr_low_lq)):
        if hi > lo:
            anomaly = True
        elif anomaly:
            return float(r)
    return None
