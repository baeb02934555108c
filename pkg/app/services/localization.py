"""ToA ranging and linear least-squares position extraction in the plane.

Squared ranges are linear in (x, y, x^2 + y^2):  A @ [x, y, x^2+y^2] = b with
row i of A equal to -2 * (x_i, y_i, -0.5) and b_i = d_i^2 - x_i^2 - y_i^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from app.services.channel import ChannelParams, distance_noise_sigma
from app.services.errors import DegenerateGeometryError, DomainError

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ReferenceNodeSet:
    anchors: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.anchors)
        object.__setattr__(self, "anchors", pts)
        if len(pts) < 3:
            raise DegenerateGeometryError(f"need at least 3 reference nodes, got {len(pts)}")
        for a, b in combinations(pts, 2):
            if a == b:
                raise DegenerateGeometryError(f"duplicate reference node at {a}")

    @property
    def count(self) -> int:
        return len(self.anchors)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.anchors, dtype=float)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LocalizationSystem:
    nodes: ReferenceNodeSet
    design_matrix: np.ndarray = field(repr=False)
    pinv_a: np.ndarray = field(repr=False)
    coord_rows: np.ndarray = field(repr=False)
    ts_operator: np.ndarray = field(repr=False)
    anchor_xy: np.ndarray = field(repr=False)
    anchor_norm2: np.ndarray = field(repr=False)

    @classmethod
    def from_anchors(cls, anchors) -> LocalizationSystem:
        nodes = anchors if isinstance(anchors, ReferenceNodeSet) else ReferenceNodeSet(tuple(anchors))
        xy = nodes.as_array()
        a = np.column_stack([-2.0 * xy[:, 0], -2.0 * xy[:, 1], np.ones(len(xy))])

        ata = a.T @ a
        cond = float(np.linalg.cond(ata))
        if np.linalg.matrix_rank(a) < 3 or not np.isfinite(cond) or cond > MAX_CONDITION:
            raise DegenerateGeometryError(
                f"reference nodes are collinear or ill-conditioned (cond(A'A)={cond:.3g})"
            )

        pinv_a = np.linalg.solve(ata, a.T)
        coord_rows = pinv_a[:2, :]
        # (A^+_2)^+ : the Moore-Penrose inverse, so that coord_rows @ ts_operator = I_2.
        ts_operator = np.linalg.pinv(coord_rows)
        return cls(
            nodes=nodes,
            design_matrix=_frozen(a),
            pinv_a=_frozen(pinv_a),
            coord_rows=_frozen(coord_rows),
            ts_operator=_frozen(ts_operator),
            anchor_xy=_frozen(xy),
            anchor_norm2=_frozen((xy**2).sum(axis=1)),
        )

    @property
    def num_anchors(self) -> int:
        return self.nodes.count

    def projector(self) -> np.ndarray:
        """Orthogonal projector onto the row space of coord_rows (rank 2)."""
        return self.ts_operator @ self.coord_rows

    def distances_from(self, positions) -> np.ndarray:
        p = np.asarray(positions, dtype=float)
        return np.linalg.norm(p[..., None, :] - self.anchor_xy, axis=-1)


@dataclass(frozen=True)
class DistanceMeasurement:
    """Range estimates for one transmission (shape [L]) or a batch (shape [n, L])."""

    estimated: np.ndarray
    sigma: np.ndarray
    true_distances: np.ndarray

    def __post_init__(self) -> None:
        if not (self.estimated.shape == self.sigma.shape == self.true_distances.shape):
            raise DomainError("measurement arrays must share one shape")
        if np.any(self.sigma < 0):
            raise DomainError("noise sigma must be non-negative")


def measure_distances_batch(
    system: LocalizationSystem,
    params: ChannelParams,
    positions,
    rng: np.random.Generator,
    sigma_override: float | None = None,
) -> DistanceMeasurement:
    d = system.distances_from(positions)
    if np.any(d <= 0):
        raise DomainError("transmitter is colocated with a reference node")
    if sigma_override is None:
        sigma = np.asarray(distance_noise_sigma(params, d), dtype=float)
    else:
        if sigma_override < 0:
            raise DomainError("sigma_override must be non-negative")
        sigma = np.full_like(d, float(sigma_override))
    noise = rng.standard_normal(d.shape) * sigma
    return DistanceMeasurement(estimated=d + noise, sigma=sigma, true_distances=d)


def measure_distances(
    system: LocalizationSystem,
    params: ChannelParams,
    tx_pos,
    rng: np.random.Generator,
    sigma_override: float | None = None,
) -> DistanceMeasurement:
    pos = np.asarray(tx_pos, dtype=float).reshape(2)
    return measure_distances_batch(system, params, pos, rng, sigma_override)


def build_b_vector(system: LocalizationSystem, meas: DistanceMeasurement) -> np.ndarray:
    if meas.estimated.shape[-1] != system.num_anchors:
        raise DomainError(
            f"measurement has {meas.estimated.shape[-1]} ranges for {system.num_anchors} nodes"
        )
    return meas.estimated**2 - system.anchor_norm2


def exact_b_vector(system: LocalizationSystem, tx_pos) -> np.ndarray:
    return system.distances_from(tx_pos) ** 2 - system.anchor_norm2


def solve_positions(system: LocalizationSystem, b) -> np.ndarray:
    """x_hat = A^+_2 b for b of shape [L] or [n, L]."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != system.num_anchors:
        raise DomainError(f"b has length {b.shape[-1]}, expected {system.num_anchors}")
    return b @ system.coord_rows.T


def solve_position(system: LocalizationSystem, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.ndim != 1:
        raise DomainError(f"expected a single b vector, got shape {b.shape}")
    return solve_positions(system, b)


def linearized_uncertainty(system: LocalizationSystem, distances, noise) -> np.ndarray:
    """First-order position error 2 * A^+_2 (n_i d_i)."""
    w = 2.0 * np.asarray(noise, dtype=float) * np.asarray(distances, dtype=float)
    return w @ system.coord_rows.T
