"""Distributions of the test statistic and the resulting error probabilities.

Both hypotheses lead to a weighted sum of independent one-degree-of-freedom
chi-square variables, Q = sum_i gamma_i * chi2_1(lambda_i). Its CDF is computed by
Imhof's characteristic-function inversion (authoritative) or by a Laguerre
polynomial expansion (alternate, cross-checked against Imhof).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from app.models.results import RocCurve, RocPoint
from app.services.authenticator import LegitimateProfile
from app.services.channel import ChannelParams, distance_noise_sigma
from app.services.errors import DomainError, NumericalFailureError
from app.services.localization import LocalizationSystem
from app.settings import settings

logger = logging.getLogger(__name__)

CLAMP_WARN = 1e-6
EIGEN_CUTOFF = 1e-12
ROUNDING_BUDGET = 1e-7
EVALUATORS = ("imhof", "laguerre")

# Laguerre evaluator tuning
FOLD_RATIO = 1e-4
PRECISION_NATS = 10.0
HOPELESS_NATS = 30.0
RESCALE = 1e100
TUNED_C = (4.0, 3.0, 2.5, 2.2, 2.1, 2.05, 2.02, 2.01)
TUNED_ATTEMPTS = 3


@dataclass(frozen=True)
class WeightedChiSquareSpec:
    weights: tuple[float, ...]
    noncentrality: tuple[float, ...]

    def __post_init__(self) -> None:
        w = tuple(float(v) for v in self.weights)
        nc = tuple(float(v) for v in self.noncentrality)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noncentrality", nc)
        if not w:
            raise DomainError("spec needs at least one term")
        if len(w) != len(nc):
            raise DomainError("weights and noncentrality must have equal length")
        if any(not (v > 0 and math.isfinite(v)) for v in w):
            raise DomainError(f"weights must be positive and finite, got {w}")
        if any(not (v >= 0 and math.isfinite(v)) for v in nc):
            raise DomainError(f"noncentralities must be non-negative, got {nc}")

    @classmethod
    def central(cls, weights: Sequence[float]) -> WeightedChiSquareSpec:
        return cls(tuple(weights), tuple(0.0 for _ in weights))

    @property
    def size(self) -> int:
        return len(self.weights)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.weights), np.asarray(self.noncentrality)


@dataclass(frozen=True)
class LaguerreSeriesParams:
    beta: float
    mu0: float
    max_terms: int = 500
    tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if not (self.beta > 0 and self.mu0 > 0):
            raise DomainError("Laguerre series needs beta > 0 and mu0 > 0")
        if self.max_terms < 1 or not self.tolerance > 0:
            raise DomainError("max_terms must be >= 1 and tolerance > 0")

    @classmethod
    def default_for(cls, spec: WeightedChiSquareSpec) -> LaguerreSeriesParams:
        w, nc = spec.arrays()
        effective = w * (1.0 + nc)
        half_dof = spec.size / 2.0
        return cls(
            beta=float(effective.max() + effective.min()) / 4.0,
            mu0=(half_dof + 1.0) / 4.0,
            max_terms=settings.laguerre_max_terms,
            tolerance=settings.laguerre_tolerance,
        )


def spec_mean(spec: WeightedChiSquareSpec) -> float:
    w, nc = spec.arrays()
    return float(np.sum(w * (1.0 + nc)))


def spec_variance(spec: WeightedChiSquareSpec) -> float:
    w, nc = spec.arrays()
    return float(np.sum(2.0 * w**2 * (1.0 + 2.0 * nc)))


def sample_weighted_chi_square(
    spec: WeightedChiSquareSpec, n: int, rng: np.random.Generator
) -> np.ndarray:
    w, nc = spec.arrays()
    z = rng.standard_normal((n, spec.size)) + np.sqrt(nc)
    return (z**2) @ w


# ---------------------------------------------------------------------------
# Distribution specs
# ---------------------------------------------------------------------------


def _gamma_weights(params: ChannelParams, distances: np.ndarray) -> np.ndarray:
    sigma = np.asarray(distance_noise_sigma(params, distances), dtype=float)
    return 4.0 * distances**2 * sigma**2


def spec_under_h0(
    system: LocalizationSystem, profile: LegitimateProfile, params: ChannelParams
) -> WeightedChiSquareSpec:
    d_a = np.asarray(profile.distances)
    return WeightedChiSquareSpec.central(_gamma_weights(params, d_a))


def spec_under_h1(
    system: LocalizationSystem,
    profile: LegitimateProfile,
    attacker_pos,
    params: ChannelParams,
) -> WeightedChiSquareSpec:
    d_e = system.distances_from(attacker_pos)
    if np.any(d_e <= 0):
        raise DomainError("attacker is colocated with a reference node")
    gamma = _gamma_weights(params, d_e)
    delta = d_e**2 - np.asarray(profile.distances) ** 2
    return WeightedChiSquareSpec(tuple(gamma), tuple(delta**2 / gamma))


def projected_spec(
    system: LocalizationSystem,
    profile: LegitimateProfile,
    tx_pos,
    params: ChannelParams,
) -> WeightedChiSquareSpec:
    """Law of ||P (delta + w)||^2 with P the rank-2 projector of the LS fit."""
    d_tx = system.distances_from(tx_pos)
    if np.any(d_tx <= 0):
        raise DomainError("transmitter is colocated with a reference node")
    gamma = _gamma_weights(params, d_tx)
    delta = d_tx**2 - np.asarray(profile.distances) ** 2

    root = np.sqrt(gamma)
    proj = system.projector()
    m = root[:, None] * proj * root[None, :]
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    keep = vals > EIGEN_CUTOFF * vals.max()
    shift = vecs[:, keep].T @ (delta / root)
    return WeightedChiSquareSpec(tuple(vals[keep]), tuple(shift**2))


# ---------------------------------------------------------------------------
# CDF evaluators
# ---------------------------------------------------------------------------


def _clamp(value: float, method: str) -> float:
    if value < -CLAMP_WARN or value > 1.0 + CLAMP_WARN:
        logger.warning("%s CDF %.3e left [0, 1] by more than %.0e; clamped", method, value, CLAMP_WARN)
    return min(max(value, 0.0), 1.0)


def tail_bounds(spec: WeightedChiSquareSpec, x: float) -> tuple[float, float]:
    """Chernoff bounds on log P(Q <= x) and log P(Q > x).

    Every exponent in the search range yields a valid bound; the scalar search only
    tightens it.
    """
    w, nc = spec.arrays()
    scale = float(w.max())
    lam = w / scale
    y = x / scale

    def below(log_v: float) -> float:
        v = math.exp(log_v)
        den = 1.0 + 2.0 * lam * v
        return v * y - 0.5 * float(np.sum(np.log(den))) - float(np.sum(nc * lam * v / den))

    def above(v: float) -> float:
        den = 1.0 - 2.0 * lam * v
        return -v * y - 0.5 * float(np.sum(np.log(den))) + float(np.sum(nc * lam * v / den))

    lo = optimize.minimize_scalar(below, bounds=(-40.0, 40.0), method="bounded")
    hi = optimize.minimize_scalar(above, bounds=(0.0, 0.5 * (1.0 - 1e-9)), method="bounded")
    return min(float(lo.fun), 0.0), min(float(hi.fun), 0.0)


def _settled_by_bounds(spec: WeightedChiSquareSpec, x: float, tol: float) -> float | None:
    log_below, log_above = tail_bounds(spec, x)
    if log_below < math.log(tol):
        return 0.0
    if log_above < math.log(tol):
        return 1.0
    return None


def _quad(fn: Callable[[float], float], a: float, b: float, tol: float, **kwargs) -> tuple[float, float]:
    res = integrate.quad(fn, a, b, epsabs=tol, epsrel=0.0, limit=500, full_output=1, **kwargs)
    value, abserr = float(res[0]), float(res[1])
    failed = len(res) > 3
    if not math.isfinite(value) or (failed and abserr > tol):
        raise NumericalFailureError(
            "Imhof quadrature did not converge",
            {"interval": (a, b), "abserr": abserr, "message": res[3] if failed else ""},
        )
    return value, abserr


def cdf_imhof(spec: WeightedChiSquareSpec, x: float, tol: float | None = None) -> float:
    if x < 0:
        raise DomainError(f"CDF argument must be non-negative, got {x!r}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    tol = settings.imhof_tolerance if tol is None else tol
    # Far tails: the integrand cancels to below tol and quad cannot resolve it.
    settled = _settled_by_bounds(spec, x, tol)
    if settled is not None:
        logger.debug("imhof x=%g settled at %g by the tail bound", x, settled)
        return settled
    w, nc = spec.arrays()
    scale = float(w.max())
    lam = w / scale
    a = 0.5 * x / scale

    def phase(u: float) -> float:
        lu = lam * u
        return 0.5 * float(np.sum(np.arctan(lu) + nc * lu / (1.0 + lu * lu)))

    def log_rho(u: float) -> float:
        lu2 = (lam * u) ** 2
        return 0.25 * float(np.sum(np.log1p(lu2))) + 0.5 * float(np.sum(nc * lu2 / (1.0 + lu2)))

    def head(u: float) -> float:
        if u == 0.0:
            return 0.5 * float(np.sum(lam * (1.0 + nc))) - a
        return math.sin(phase(u) - a * u) * math.exp(-math.log(u) - log_rho(u))

    def tail_cos(u: float) -> float:
        return math.sin(phase(u)) * math.exp(-math.log(u) - log_rho(u))

    def tail_sin(u: float) -> float:
        return math.cos(phase(u)) * math.exp(-math.log(u) - log_rho(u))

    split = 1.0
    part_tol = tol * math.pi / 3.0
    # Large non-centralities squeeze the integrand into [0, ~1/spread]; point quad at it.
    spread = math.sqrt(float(np.sum(lam**2 * (1.0 + 2.0 * nc))))
    ladder = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
    breaks = [b / spread for b in ladder if b / spread < split] if spread > 1.0 else []
    # sin(phi - a u) = sin(phi) cos(a u) - cos(phi) sin(a u); the tail uses Fourier quadrature.
    i_head, e_head = _quad(head, 0.0, split, part_tol, points=breaks or None)
    i_cos, e_cos = _quad(tail_cos, split, np.inf, part_tol, weight="cos", wvar=a)
    i_sin, e_sin = _quad(tail_sin, split, np.inf, part_tol, weight="sin", wvar=a)
    integral = i_head + i_cos - i_sin
    logger.debug("imhof x=%g integral=%.12g abserr=%.2e", x, integral, e_head + e_cos + e_sin)
    return _clamp(0.5 - integral / math.pi, "imhof")


@dataclass(frozen=True)
class _SeriesGenerator:
    """Generating function sum_k zeta_k t^k of the series coefficients.

    log Z(t) = log zeta_0 - 1/2 sum_i log(1 - r_i t) - log(1 - q t)
               - bc/2 sum_i a_i t / (1 - r_i t),
    analytic inside |t| < 1/rho, so the unit circle is a valid Cauchy contour.
    """

    r: np.ndarray
    q: float
    a: np.ndarray
    bc: float
    log_zeta0: float

    def log_at(self, t: np.ndarray) -> np.ndarray:
        out = self.log_zeta0 - np.log1p(-self.q * t)
        for ri, ai in zip(self.r, self.a):
            one_minus = 1.0 - ri * t
            out = out - 0.5 * np.log(one_minus) - 0.5 * self.bc * ai * t / one_minus
        return out

    def log_peak(self, samples: int = 4096) -> float:
        """max log|Z| on the unit circle (sampled)."""
        t = np.exp(2j * np.pi * np.arange(samples) / samples)
        return float(self.log_at(t).real.max())

    def coefficients(self, terms: int, log_norm: float) -> tuple[list[float], float]:
        """zeta_k * exp(-log_norm) for k < terms, and their absolute FFT noise."""
        n = 1 << max((terms - 1).bit_length() + 1, 6)
        t = np.exp(2j * np.pi * np.arange(n) / n)
        gen = np.exp(self.log_at(t) - log_norm)
        coeffs = np.fft.fft(gen).real / n
        rms = math.sqrt(float(np.mean(np.abs(gen) ** 2)))
        return coeffs[:terms].tolist(), rms * float(np.finfo(float).eps) * math.sqrt(math.log2(n))


def _laguerre_sum(w: np.ndarray, nc: np.ndarray, x: float, series: LaguerreSeriesParams) -> float:
    m = w.size / 2.0
    beta, mu0 = series.beta, series.mu0
    c = (m + 1.0) / mu0
    if c <= 1.0:
        raise DomainError(f"mu0 must be below L/2 + 1 = {m + 1.0}, got {mu0}")
    diagnostics = {"x": x, "beta": beta, "mu0": mu0}

    q = -1.0 / (c - 1.0)
    dd = beta + w * (c - 1.0)
    r = (beta - w) / dd
    rho = max(abs(q), float(np.abs(r).max()))
    if rho >= 1.0:
        raise NumericalFailureError(
            "Laguerre series diverges for mu0 >= (L/2 + 1)/2; use cdf_imhof",
            {**diagnostics, "rho": rho},
        )

    y = x / (2.0 * beta)
    z = c * y
    generator = _SeriesGenerator(
        r=r,
        q=q,
        a=nc * w / dd**2,
        bc=beta * c,
        log_zeta0=(
            0.5 * float(np.sum(np.log(beta / dd)))
            - math.log(c - 1.0)
            - 0.5 * float(np.sum(nc * w * (c - 1.0) / dd))
        ),
    )
    log_norm = generator.log_peak()
    log_scale = (
        -y + m * math.log(y) - float(special.gammaln(m + 1.0)) + (m + 1.0) * math.log(c) + log_norm
    )
    # |zeta_k| <= exp(log_norm), and |k! / (m+1)_k * L_k^(m)(z)| <= exp(z / 2).
    envelope = log_scale + 0.5 * z
    if envelope > HOPELESS_NATS:
        raise NumericalFailureError(
            "Laguerre terms are too large to cancel to a probability; use cdf_imhof",
            {**diagnostics, "envelope": envelope},
        )
    budget = max(envelope, 0.0) + math.log(1.0 / series.tolerance) + 5.0
    terms = int(math.ceil(1.5 * budget / -math.log(rho))) + 16
    if terms > series.max_terms:
        raise NumericalFailureError(
            "Laguerre series needs more than max_terms; use cdf_imhof",
            {**diagnostics, "terms": terms, "max_terms": series.max_terms},
        )

    zeta, zeta_noise = generator.coefficients(terms, log_norm)

    # Normalized polynomials M_k = k!/(m+1)_k L_k^(m)(z) by forward recurrence,
    # divided by RESCALE whenever they grow past it; `shift` keeps the log of the factor.
    m_prev, m_cur = 1.0, 1.0 - z / (m + 1.0)
    acc = zeta[0] + zeta[1] * m_cur
    largest = max(abs(zeta[0]), abs(zeta[1] * m_cur))
    energy = 1.0 + m_cur * m_cur
    shift = 0.0
    tail = 0.0
    window = terms - max(terms // 10, 3)
    for k in range(1, terms - 1):
        m_prev, m_cur = m_cur, ((2 * k + 1 + m - z) * m_cur - k * m_prev) / (k + m + 1.0)
        if abs(m_cur) > RESCALE:
            m_prev /= RESCALE
            m_cur /= RESCALE
            acc /= RESCALE
            largest /= RESCALE
            tail /= RESCALE
            energy /= RESCALE * RESCALE
            shift += math.log(RESCALE)
        term = zeta[k + 1] * m_cur
        acc += term
        largest = max(largest, abs(term))
        energy += m_cur * m_cur
        if k + 1 >= window:
            tail = max(tail, abs(term))

    log_front = log_scale + shift

    def restored(v: float) -> float:
        if v == 0.0:
            return 0.0
        return math.copysign(math.exp(min(math.log(abs(v)) + log_front, 700.0)), v)

    last_term = restored(tail)
    if last_term > series.tolerance:
        raise NumericalFailureError(
            "Laguerre series did not converge within its term budget; use cdf_imhof",
            {**diagnostics, "terms": terms, "last_term": last_term},
        )
    eps = float(np.finfo(float).eps)
    rounding = restored(largest) * eps * math.sqrt(terms) + zeta_noise * restored(math.sqrt(energy))
    if rounding > ROUNDING_BUDGET:
        raise NumericalFailureError(
            "Laguerre series lost precision to cancellation; use cdf_imhof",
            {**diagnostics, "terms": terms, "rounding": rounding},
        )
    return restored(acc)


def _fold_negligible(
    w: np.ndarray, nc: np.ndarray, x: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Replace the smallest components by their mean while their spread stays negligible."""
    var = 2.0 * w**2 * (1.0 + 2.0 * nc)
    total = float(var.sum())
    folded_var = 0.0
    shift = 0.0
    fold = np.zeros(w.size, dtype=bool)
    for i in np.argsort(w)[:-1]:
        if folded_var + var[i] > FOLD_RATIO**2 * (total - folded_var - var[i]):
            break
        folded_var += float(var[i])
        shift += float(w[i] * (1.0 + nc[i]))
        fold[i] = True
    if not fold.any() or shift >= x:
        return w, nc, x
    return w[~fold], nc[~fold], x - shift


def _max_y(c: float, m: float) -> float | None:
    """Largest y = x / (2 beta) whose term envelope stays within PRECISION_NATS."""
    const = (m + 1.0) * math.log(c) - float(special.gammaln(m + 1.0)) - PRECISION_NATS

    def excess(log_y: float) -> float:
        return math.exp(log_y) * (0.5 * c - 1.0) + m * log_y + const

    lo, hi = -30.0, 1.0
    if excess(lo) >= 0:
        return None
    while excess(hi) < 0:
        hi += 5.0
    return math.exp(optimize.brentq(excess, lo, hi))


def _tuned_series(
    w: np.ndarray, x: float, max_terms: int, tolerance: float
) -> list[LaguerreSeriesParams]:
    """Fallback (beta, mu0) choices, fastest-converging first.

    beta balances the contraction of the smallest and largest weights, raised where
    needed so the terms stay small enough to cancel in double precision.
    """
    m = w.size / 2.0
    lo, hi = float(w.min()), float(w.max())
    ranked: list[tuple[float, float, float]] = []
    for c in TUNED_C:
        y_max = _max_y(c, m)
        if y_max is None:
            continue
        s = c - 2.0
        disc = (s * (lo + hi)) ** 2 + 16.0 * (c - 1.0) * lo * hi
        balanced = (math.sqrt(disc) - s * (lo + hi)) / 4.0
        beta = max(balanced, x / (2.0 * y_max))
        rho = max(1.0 / (c - 1.0), float(np.abs((beta - w) / (beta + w * (c - 1.0))).max()))
        ranked.append((-1.0 / math.log(rho), beta, c))
    ranked.sort()
    return [
        LaguerreSeriesParams(beta=beta, mu0=(m + 1.0) / c, max_terms=max_terms, tolerance=tolerance)
        for _, beta, c in ranked[:TUNED_ATTEMPTS]
    ]


def cdf_laguerre(
    spec: WeightedChiSquareSpec, x: float, series: LaguerreSeriesParams | None = None
) -> float:
    """Laguerre-series CDF.

    With explicit ``series`` parameters the expansion is evaluated once, as given.
    Otherwise the far tails are settled by their Chernoff bounds, components with
    negligible spread act as a constant shift, and the default parameters are tried
    before the tuned fallbacks.
    """
    if x < 0:
        raise DomainError(f"CDF argument must be non-negative, got {x!r}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    w, nc = spec.arrays()
    if series is not None:
        return _clamp(_laguerre_sum(w, nc, x, series), "laguerre")

    settled = _settled_by_bounds(spec, x, settings.laguerre_tolerance)
    if settled is not None:
        return settled
    w, nc, shifted = _fold_negligible(w, nc, x)
    attempts = [
        LaguerreSeriesParams.default_for(WeightedChiSquareSpec(tuple(w), tuple(nc))),
        *_tuned_series(w, shifted, settings.laguerre_term_cap, settings.laguerre_tolerance),
    ]
    failures: list[dict] = []
    for params in attempts:
        try:
            return _clamp(_laguerre_sum(w, nc, shifted, params), "laguerre")
        except NumericalFailureError as e:
            failures.append({"error": e.args[0], **e.diagnostics})
    raise NumericalFailureError(
        "Laguerre series failed for every parameter choice; use cdf_imhof",
        {"x": x, "folded": spec.size - w.size, "attempts": failures},
    )


def cdf(spec: WeightedChiSquareSpec, x: float, evaluator: str = "imhof") -> float:
    if evaluator == "imhof":
        return cdf_imhof(spec, x)
    if evaluator == "laguerre":
        return cdf_laguerre(spec, x)
    raise DomainError(f"unknown evaluator {evaluator!r}; expected one of {EVALUATORS}")


# ---------------------------------------------------------------------------
# Error probabilities
# ---------------------------------------------------------------------------


def _check_threshold(threshold: float) -> None:
    if not threshold >= 0:
        raise DomainError(f"threshold must be non-negative, got {threshold!r}")


def analytic_far(spec_h0: WeightedChiSquareSpec, threshold: float, evaluator: str = "imhof") -> float:
    _check_threshold(threshold)
    return 1.0 - cdf(spec_h0, threshold, evaluator)


def analytic_mdr(spec_h1: WeightedChiSquareSpec, threshold: float, evaluator: str = "imhof") -> float:
    _check_threshold(threshold)
    return cdf(spec_h1, threshold, evaluator)


def threshold_for_far(spec_h0: WeightedChiSquareSpec, target: float) -> float:
    if not 0.0 < target < 1.0:
        raise DomainError(f"target FAR must lie in (0, 1), got {target!r}")
    goal = 1.0 - target

    def excess(eps: float) -> float:
        return cdf_imhof(spec_h0, eps) - goal

    lo, hi = 0.0, spec_mean(spec_h0)
    while excess(hi) < 0:
        lo, hi = hi, hi * 4.0
    return float(optimize.brentq(excess, lo, hi, xtol=1e-12 * hi, rtol=1e-12))


def _check_grid(grid: Sequence[float]) -> list[float]:
    values = [float(v) for v in grid]
    if not values:
        raise DomainError("threshold grid is empty")
    if values[0] < 0 or any(b <= a for a, b in zip(values, values[1:])):
        raise DomainError("threshold grid must be non-negative and strictly increasing")
    return values


def analytic_roc(
    spec_h0: WeightedChiSquareSpec,
    spec_h1: WeightedChiSquareSpec,
    threshold_grid: Sequence[float],
    *,
    evaluator: str = "imhof",
    workers: int | None = None,
    fingerprint: str = "",
) -> RocCurve:
    grid = _check_grid(threshold_grid)

    def point(eps: float) -> RocPoint:
        pfa = analytic_far(spec_h0, eps, evaluator)
        pd = 1.0 - analytic_mdr(spec_h1, eps, evaluator)
        return RocPoint(threshold=eps, pfa=pfa, pd=pd)

    n_workers = settings.workers if workers is None else workers
    if n_workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            points = list(pool.map(point, grid))
    else:
        points = [point(eps) for eps in grid]
    return RocCurve(points=tuple(points), provenance="analytic", fingerprint=fingerprint)
