from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from app.services.analytic import (
    LaguerreSeriesParams,
    WeightedChiSquareSpec,
    analytic_far,
    analytic_mdr,
    analytic_roc,
    cdf,
    cdf_imhof,
    cdf_laguerre,
    projected_spec,
    sample_weighted_chi_square,
    spec_mean,
    spec_under_h0,
    spec_under_h1,
    tail_bounds,
    threshold_for_far,
)
from app.services.authenticator import LegitimateProfile
from app.services.channel import ChannelParams, distance_noise_sigma, probe_processing_gain
from app.services.errors import DomainError, NumericalFailureError
from app.services.localization import LocalizationSystem

ANCHORS_L3 = [(0.0, 500.0), (-500.0, -500.0), (500.0, -500.0)]


def _default_setup():
    system = LocalizationSystem.from_anchors(ANCHORS_L3)
    profile = LegitimateProfile.enroll(system, (0.0, 0.0))
    params = ChannelParams(processing_gain=probe_processing_gain(10_000.0, 8))
    return system, profile, params


@pytest.mark.parametrize("gamma", [0.5, 3.0, 250.0])
@pytest.mark.parametrize("q", [0.2, 1.0, 4.0])
def test_imhof_single_term_matches_chi_square(gamma, q):
    spec = WeightedChiSquareSpec.central([gamma])
    assert cdf_imhof(spec, q * gamma) == pytest.approx(stats.chi2.cdf(q, 1), abs=1e-8)


def test_imhof_equal_weights_match_gamma_law():
    gamma = 3.0
    spec = WeightedChiSquareSpec.central([gamma] * 3)
    expected = stats.gamma.cdf(10.0, a=1.5, scale=2 * gamma)
    assert cdf_imhof(spec, 10.0) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("nc", [0.5, 5.0, 40.0])
def test_imhof_single_noncentral_term_matches_ncx2(nc):
    gamma = 2.0
    spec = WeightedChiSquareSpec((gamma,), (nc,))
    for q in (0.5 * (1 + nc), 1 + nc, 2 * (1 + nc)):
        assert cdf_imhof(spec, q * gamma) == pytest.approx(stats.ncx2.cdf(q, 1, nc), abs=1e-7)


def test_laguerre_single_term_matches_chi_square():
    spec = WeightedChiSquareSpec.central([7.0])
    for q in (0.3, 1.0, 2.5):
        assert cdf_laguerre(spec, q * 7.0) == pytest.approx(stats.chi2.cdf(q, 1), abs=1e-8)


def test_evaluators_agree_on_central_suite():
    rng = np.random.default_rng(5)
    for _ in range(25):
        size = int(rng.choice([2, 3, 5]))
        weights = 10 ** rng.uniform(0, 1, size)
        spec = WeightedChiSquareSpec.central(weights)
        x = float(rng.uniform(0.3, 1.5) * spec_mean(spec))
        assert cdf_laguerre(spec, x) == pytest.approx(cdf_imhof(spec, x), abs=1e-6)


def test_evaluators_agree_on_noncentral_suite():
    rng = np.random.default_rng(9)
    for _ in range(20):
        weights = 10 ** rng.uniform(0, 1, 3)
        spec = WeightedChiSquareSpec(tuple(weights), tuple(rng.uniform(0, 3, 3)))
        x = float(rng.uniform(0.5, 1.5) * spec_mean(spec))
        assert cdf_laguerre(spec, x) == pytest.approx(cdf_imhof(spec, x), abs=1e-6)


@pytest.mark.parametrize("seed", [7, 8])
def test_evaluators_agree_on_wide_weight_range(seed):
    rng = np.random.default_rng(seed)
    for _ in range(6):
        size = int(rng.choice([3, 5]))
        spec = WeightedChiSquareSpec(
            tuple(10 ** rng.uniform(-2, 4, size)), tuple(rng.uniform(0, 50, size))
        )
        x = float(rng.uniform(0.2, 2.0) * spec_mean(spec))
        assert cdf_laguerre(spec, x) == pytest.approx(cdf_imhof(spec, x), abs=1e-6)


def test_evaluators_agree_on_wide_central_specs():
    rng = np.random.default_rng(13)
    for _ in range(8):
        spec = WeightedChiSquareSpec.central(10 ** rng.uniform(-2, 4, int(rng.choice([3, 5]))))
        x = float(rng.uniform(0.2, 2.0) * spec_mean(spec))
        assert cdf_laguerre(spec, x) == pytest.approx(cdf_imhof(spec, x), abs=1e-6)


def test_laguerre_falls_back_when_default_parameters_need_too_many_terms():
    spec = WeightedChiSquareSpec.central([10.0, 1e4])
    x = spec_mean(spec)
    with pytest.raises(NumericalFailureError) as err:
        cdf_laguerre(spec, x, LaguerreSeriesParams.default_for(spec))
    assert err.value.diagnostics["terms"] > err.value.diagnostics["max_terms"]
    assert cdf_laguerre(spec, x) == pytest.approx(cdf_imhof(spec, x), abs=1e-6)


def test_laguerre_rejects_mu0_at_or_above_limit():
    spec = WeightedChiSquareSpec.central([1.0, 2.0])
    with pytest.raises(DomainError):
        cdf_laguerre(spec, 2.0, LaguerreSeriesParams(beta=1.0, mu0=2.0))


def test_laguerre_reports_max_terms_exhaustion():
    spec = WeightedChiSquareSpec.central([1.0, 9.0])
    with pytest.raises(NumericalFailureError):
        cdf_laguerre(spec, 10.0, LaguerreSeriesParams(beta=2.5, mu0=0.5, max_terms=2))


def test_cdf_edges_and_domain():
    spec = WeightedChiSquareSpec.central([1.0, 2.0])
    assert cdf_imhof(spec, 0.0) == 0.0
    assert cdf_imhof(spec, float("inf")) == 1.0
    with pytest.raises(DomainError):
        cdf_imhof(spec, -1.0)
    with pytest.raises(DomainError):
        cdf(spec, 1.0, "saddlepoint")


def test_spec_validation():
    with pytest.raises(DomainError):
        WeightedChiSquareSpec((1.0, -2.0), (0.0, 0.0))
    with pytest.raises(DomainError):
        WeightedChiSquareSpec((1.0,), (0.0, 0.0))
    with pytest.raises(DomainError):
        WeightedChiSquareSpec((), ())


def test_projected_spec_has_two_terms_and_smaller_mean():
    system, profile, params = _default_setup()
    projected = projected_spec(system, profile, profile.position, params)
    unprojected = spec_under_h0(system, profile, params)
    assert projected.size == 2
    assert all(v == 0.0 for v in projected.noncentrality)
    assert spec_mean(projected) < spec_mean(unprojected)
    # 10 kHz probe at LQ 10 dB, anchors 500-707 m away.
    assert 1e5 < spec_mean(projected) < 4e5


def test_h1_at_legitimate_position_reduces_to_h0():
    system, profile, params = _default_setup()
    h1 = spec_under_h1(system, profile, profile.position, params)
    h0 = spec_under_h0(system, profile, params)
    assert h1.weights == pytest.approx(h0.weights)
    assert all(v == 0.0 for v in h1.noncentrality)


def test_h1_rejects_attacker_on_anchor():
    system, profile, params = _default_setup()
    with pytest.raises(DomainError):
        spec_under_h1(system, profile, ANCHORS_L3[0], params)


def test_error_rates_at_zero_threshold():
    system, profile, params = _default_setup()
    h0 = projected_spec(system, profile, profile.position, params)
    h1 = projected_spec(system, profile, (50.0, 50.0), params)
    assert analytic_far(h0, 0.0) == 1.0
    assert analytic_mdr(h1, 0.0) == 0.0
    with pytest.raises(DomainError):
        analytic_far(h0, -1.0)


def test_far_drops_with_link_quality():
    system, profile, params = _default_setup()
    fars = [
        analytic_far(projected_spec(system, profile, profile.position, params.with_link_quality(lq)), 1e6)
        for lq in (-10.0, 0.0, 10.0, 20.0)
    ]
    assert all(b < a for a, b in zip(fars, fars[1:]))
    assert fars[0] > 0.5
    assert fars[2] < 0.05


def test_threshold_for_far_round_trip():
    system, profile, params = _default_setup()
    h0 = projected_spec(system, profile, profile.position, params)
    for target in (0.2, 0.05, 0.01):
        eps = threshold_for_far(h0, target)
        assert analytic_far(h0, eps) == pytest.approx(target, abs=1e-7)
    with pytest.raises(DomainError):
        threshold_for_far(h0, 1.0)


def test_roc_of_identical_laws_is_the_diagonal():
    spec = WeightedChiSquareSpec.central([1.0, 4.0])
    curve = analytic_roc(spec, spec, [0.5, 1.0, 5.0, 20.0], workers=1)
    assert curve.provenance == "analytic"
    for point in curve.points:
        assert point.pd == pytest.approx(point.pfa, abs=1e-12)


def test_parallel_roc_matches_sequential():
    h0 = WeightedChiSquareSpec.central([1.0, 4.0])
    h1 = WeightedChiSquareSpec((1.0, 4.0), (3.0, 1.0))
    grid = list(np.geomspace(0.1, 50.0, 12))
    assert analytic_roc(h0, h1, grid, workers=4) == analytic_roc(h0, h1, grid, workers=1)


def test_roc_rejects_unsorted_grid():
    spec = WeightedChiSquareSpec.central([1.0])
    with pytest.raises(DomainError):
        analytic_roc(spec, spec, [2.0, 1.0])
    with pytest.raises(DomainError):
        analytic_roc(spec, spec, [])


def test_sampler_follows_the_analytic_law():
    spec = WeightedChiSquareSpec((2.0, 5.0), (1.0, 0.5))
    samples = sample_weighted_chi_square(spec, 400, np.random.default_rng(21))
    result = stats.kstest(samples, lambda v: np.array([cdf_imhof(spec, float(x)) for x in v]))
    assert result.pvalue > 1e-3


def test_mdr_vanishes_for_a_distant_attacker():
    system, profile, params = _default_setup()
    h1 = projected_spec(system, profile, (-437.5, -312.5), params.with_link_quality(10.0))
    assert spec_mean(h1) > 1e3 * 1e6
    assert analytic_mdr(h1, 1e6) == pytest.approx(0.0, abs=1e-9)
    assert analytic_mdr(h1, 1e6, evaluator="laguerre") == pytest.approx(0.0, abs=1e-9)


def test_imhof_settles_far_tails():
    assert cdf_imhof(WeightedChiSquareSpec.central([1.0]), 400.0) == 1.0
    assert cdf_imhof(WeightedChiSquareSpec((1.0,), (1e4,)), 10.0) == 0.0


@pytest.mark.parametrize("x", [0.05, 1.0, 6.0, 20.0, 60.0])
def test_tail_bounds_dominate_the_exact_tails(x):
    spec = WeightedChiSquareSpec((2.0,), (3.0,))
    log_below, log_above = tail_bounds(spec, x)
    assert log_below <= 0.0 and log_above <= 0.0
    assert np.exp(log_below) >= stats.ncx2.cdf(x / 2.0, 1, 3.0) - 1e-12
    assert np.exp(log_above) >= stats.ncx2.sf(x / 2.0, 1, 3.0) - 1e-12


def test_h1_law_matches_linearized_range_residuals():
    system, profile, params = _default_setup()
    attacker = (0.5, 0.5)
    h1 = spec_under_h1(system, profile, attacker, params)
    d_e = system.distances_from(attacker)
    sigma = distance_noise_sigma(params, d_e)
    delta = d_e**2 - np.asarray(profile.distances) ** 2
    n = 100_000
    noise = np.random.default_rng(31).standard_normal((n, d_e.size)) * sigma
    samples = np.sum((delta + 2.0 * d_e * noise) ** 2, axis=1)
    assert samples.mean() == pytest.approx(spec_mean(h1), abs=5.0 * samples.std() / np.sqrt(n))
    for level in (0.1, 0.5, 0.9):
        x = float(np.quantile(samples, level))
        assert cdf_imhof(h1, x) == pytest.approx(level, abs=5.0 * np.sqrt(level * (1 - level) / n))


def test_raising_noncentrality_lowers_the_cdf():
    weaker = WeightedChiSquareSpec((2.0, 5.0), (1.0, 0.5))
    stronger = WeightedChiSquareSpec((2.0, 5.0), (3.0, 0.5))
    for x in (1.0, 5.0, 10.0, 20.0, 40.0):
        assert cdf_imhof(stronger, x) < cdf_imhof(weaker, x)
        assert cdf_laguerre(stronger, x) < cdf_laguerre(weaker, x)
