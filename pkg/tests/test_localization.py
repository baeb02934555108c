from __future__ import annotations

import numpy as np
import pytest

from app.services.channel import ChannelParams, distance_noise_sigma, probe_processing_gain
from app.services.errors import DegenerateGeometryError, DomainError
from app.services.localization import (
    DistanceMeasurement,
    LocalizationSystem,
    ReferenceNodeSet,
    build_b_vector,
    exact_b_vector,
    linearized_uncertainty,
    measure_distances,
    measure_distances_batch,
    solve_position,
    solve_positions,
)

ANCHORS_L3 = [(0.0, 500.0), (-500.0, -500.0), (500.0, -500.0)]
ANCHORS_L5 = ANCHORS_L3 + [(-500.0, 500.0), (0.0, -500.0)]


def test_noiseless_pipeline_recovers_position_on_random_geometries():
    rng = np.random.default_rng(11)
    params = ChannelParams()
    checked = 0
    while checked < 300:
        count = int(rng.integers(3, 6))
        anchors = [tuple(a) for a in rng.uniform(-1000, 1000, size=(count, 2))]
        try:
            system = LocalizationSystem.from_anchors(anchors)
        except DegenerateGeometryError:
            continue
        tx = rng.uniform(-800, 800, size=2)
        meas = measure_distances(system, params, tx, rng, sigma_override=0.0)
        est = solve_position(system, build_b_vector(system, meas))
        assert np.linalg.norm(est - tx) < 1e-6
        checked += 1


def test_exact_b_vector_matches_noiseless_measurement():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    meas = measure_distances(system, ChannelParams(), (12.0, -40.0), np.random.default_rng(0), 0.0)
    assert np.allclose(build_b_vector(system, meas), exact_b_vector(system, (12.0, -40.0)))


def test_collinear_anchors_are_rejected():
    with pytest.raises(DegenerateGeometryError):
        LocalizationSystem.from_anchors([(0.0, 0.0), (100.0, 0.0), (250.0, 0.0)])


def test_duplicate_and_too_few_anchors_are_rejected():
    with pytest.raises(DegenerateGeometryError):
        ReferenceNodeSet(((0.0, 0.0), (1.0, 1.0), (0.0, 0.0)))
    with pytest.raises(DegenerateGeometryError):
        ReferenceNodeSet(((0.0, 0.0), (1.0, 1.0)))


@pytest.mark.parametrize("anchors", [ANCHORS_L3, ANCHORS_L5])
def test_operator_identities(anchors):
    system = LocalizationSystem.from_anchors(anchors)
    assert np.allclose(system.coord_rows @ system.ts_operator, np.eye(2), atol=1e-12)
    proj = system.projector()
    assert np.allclose(proj @ proj, proj, atol=1e-12)
    assert np.trace(proj) == pytest.approx(2.0)
    # The ones vector carries x^2 + y^2 and never reaches the coordinates.
    assert np.allclose(system.coord_rows @ np.ones(len(anchors)), 0.0, atol=1e-12)


def test_operators_are_read_only():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    with pytest.raises(ValueError):
        system.coord_rows[0, 0] = 1.0


def test_linearized_uncertainty_tracks_small_noise():
    system = LocalizationSystem.from_anchors(ANCHORS_L5)
    tx = np.array([30.0, -20.0])
    d = system.distances_from(tx)
    noise = np.array([1e-3, -2e-3, 5e-4, 1.5e-3, -1e-3])
    meas = DistanceMeasurement(estimated=d + noise, sigma=np.zeros_like(d), true_distances=d)
    est = solve_position(system, build_b_vector(system, meas))
    assert np.allclose(est - tx, linearized_uncertainty(system, d, noise), atol=1e-6)


def test_batch_measurement_shapes_and_sigma():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    positions = np.zeros((64, 2))
    meas = measure_distances_batch(system, ChannelParams(), positions, np.random.default_rng(1))
    assert meas.estimated.shape == (64, 3)
    assert np.allclose(meas.sigma[0], meas.sigma[-1])
    assert solve_positions(system, build_b_vector(system, meas)).shape == (64, 2)


def test_measurement_at_anchor_is_rejected():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    with pytest.raises(DomainError):
        measure_distances(system, ChannelParams(), (0.0, 500.0), np.random.default_rng(0))


def test_solve_position_rejects_wrong_length():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    with pytest.raises(DomainError):
        solve_position(system, [1.0, 2.0])


def test_negative_sigma_override_is_rejected():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    with pytest.raises(DomainError):
        measure_distances(system, ChannelParams(), (1.0, 1.0), np.random.default_rng(0), -1.0)


def test_range_noise_variance_matches_channel_sigma():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    params = ChannelParams()
    tx = np.tile([120.0, -80.0], (400_000, 1))
    meas = measure_distances_batch(system, params, tx, np.random.default_rng(4))
    expected = distance_noise_sigma(params, system.distances_from((120.0, -80.0))) ** 2
    observed = np.var(meas.estimated - meas.true_distances, axis=0)
    assert observed / expected == pytest.approx(np.ones(3), rel=0.01)


def test_same_seed_gives_identical_measurements():
    system = LocalizationSystem.from_anchors(ANCHORS_L5)
    params = ChannelParams()
    first = measure_distances(system, params, (30.0, 40.0), np.random.default_rng(99))
    second = measure_distances(system, params, (30.0, 40.0), np.random.default_rng(99))
    assert np.array_equal(first.estimated, second.estimated)
    other = measure_distances(system, params, (30.0, 40.0), np.random.default_rng(100))
    assert not np.array_equal(first.estimated, other.estimated)


def test_position_estimate_is_unbiased_at_high_link_quality():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    params = ChannelParams(processing_gain=probe_processing_gain(10_000.0, 8)).with_link_quality(20.0)
    tx = np.array([40.0, -60.0])
    n = 100_000
    meas = measure_distances_batch(system, params, np.tile(tx, (n, 1)), np.random.default_rng(8))
    est = solve_positions(system, build_b_vector(system, meas))
    spread = est.std(axis=0)
    assert np.all(spread > 0)
    assert np.all(np.abs(est.mean(axis=0) - tx) < 5.0 * spread / np.sqrt(n))
