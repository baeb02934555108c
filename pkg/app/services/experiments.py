"""Experiment orchestration: analytic/empirical sweep rows, ROC curves, figure recipes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from app.models.config import ExperimentConfig
from app.models.results import ErrorRates, RocCurve, RocPoint
from app.services import export
from app.services.analytic import (
    WeightedChiSquareSpec,
    analytic_far,
    analytic_mdr,
    analytic_roc,
    projected_spec,
    spec_mean,
    spec_under_h0,
    spec_under_h1,
)
from app.services.authenticator import LegitimateProfile, baseline_far, baseline_mdr
from app.services.channel import distance_noise_sigma
from app.services.errors import ConfigError, DomainError
from app.services.localization import LocalizationSystem
from app.services.simulator import (
    AttackerModel,
    Scenario,
    crossover_radius,
    derive_subseed,
    empirical_roc,
    run_trials,
    sweep_scenarios,
)
from app.settings import settings

logger = logging.getLogger(__name__)

NAN = float("nan")
FIG_LQ_DB = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
FIG4_RADII_M = (0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0, 300.0)
FIG4_LQ_DB = (0.0, 10.0, 20.0)
FIG5_LOCATIONS = (("Loc1", (1.0, 1.0)), ("Loc2", (2.0, 2.0)))
FIG5_ANCHOR_COUNTS = (3, 5)
FIG5_LQ_DB = (0.0, 10.0)
FIGURES = ("fig2", "fig3", "fig4", "fig5")

SWEEP_COLUMNS = [
    "axis", "value", "eps_th", "far_analytic", "mdr_analytic", "far_empirical",
    "mdr_empirical", "ci_far", "ci_mdr", "trials", "seed",
]
ROC_COLUMNS = ["threshold", "pfa", "pd", "provenance", "seed"]
GAP_COLUMNS = [
    "axis", "value", "eps_th", "far_unprojected", "far_projected", "far_empirical",
    "mdr_unprojected", "mdr_projected", "mdr_empirical", "trials", "seed",
]
FIGURE_COLUMNS = {
    "fig2": ["lq_db", "eps_th", "far_analytic", "far_empirical", "ci_halfwidth",
             "far_baseline", "trials", "seed"],
    "fig3": ["lq_db", "eps_th", "mdr_analytic", "mdr_empirical", "ci_halfwidth",
             "mdr_baseline", "trials", "seed"],
    "fig4": ["radius_m", "lq_db", "eps_th", "mdr_analytic", "mdr_empirical", "ci_halfwidth",
             "trials", "seed"],
    "fig5": ["location", "num_anchors", "lq_db", "threshold", "pfa", "pd", "provenance", "seed"],
}


# ---------------------------------------------------------------------------
# Analytic rates for a scenario
# ---------------------------------------------------------------------------


def _specs(
    scenario: Scenario, attacker_pos, model: str
) -> tuple[WeightedChiSquareSpec, WeightedChiSquareSpec]:
    system, profile, params = scenario.system, scenario.legitimate, scenario.channel
    if model == "unprojected":
        return (
            spec_under_h0(system, profile, params),
            spec_under_h1(system, profile, attacker_pos, params),
        )
    if model == "projected":
        return (
            projected_spec(system, profile, profile.position, params),
            projected_spec(system, profile, attacker_pos, params),
        )
    raise DomainError(f"unknown analytic model {model!r}; expected unprojected or projected")


def _attacker_points(scenario: Scenario, resolution: int | None = None) -> np.ndarray:
    points = scenario.attacker.quadrature_points(
        scenario.legitimate.position, resolution or settings.analytic_points
    )
    d = scenario.system.distances_from(points)
    usable = np.all(d > 1e-9, axis=1)
    if not np.any(usable):
        raise DomainError("every attacker quadrature point is colocated with a reference node")
    return points[usable]


def analytic_rates(
    scenario: Scenario, model: str = "projected", evaluator: str = "imhof"
) -> tuple[float, float]:
    """Analytic FAR and (semi-analytic for random attackers) MDR at the scenario threshold."""
    if scenario.sigma_override is not None:
        raise DomainError("analytic rates follow the channel model; sigma_override is Monte Carlo only")
    eps = scenario.threshold
    points = _attacker_points(scenario)
    h0, _ = _specs(scenario, points[0], model)
    far = analytic_far(h0, eps, evaluator)
    mdr = float(np.mean([analytic_mdr(_specs(scenario, p, model)[1], eps, evaluator) for p in points]))
    return far, mdr


def analytic_baseline_rates(scenario: Scenario) -> tuple[float, float]:
    """Distance-baseline FAR/MDR, best anchor, averaged over attacker positions."""
    profile, params = scenario.legitimate, scenario.channel
    eps_b = scenario.baseline_threshold
    sigma_a = distance_noise_sigma(params, np.asarray(profile.distances))
    far = float(np.min(baseline_far(sigma_a, eps_b)))
    points = _attacker_points(scenario)
    per_anchor = [
        baseline_mdr(profile, d_e, distance_noise_sigma(params, d_e), eps_b)
        for d_e in scenario.system.distances_from(points)
    ]
    return far, float(np.min(np.mean(per_anchor, axis=0)))


def default_threshold_grid(scenario: Scenario, model: str = "projected", num: int = 60) -> list[float]:
    h0, _ = _specs(scenario, _attacker_points(scenario)[0], model)
    mean = spec_mean(h0)
    return [0.0, *(float(v) for v in np.geomspace(mean * 1e-2, mean * 50.0, num))]


def analytic_roc_for(
    scenario: Scenario,
    threshold_grid: Sequence[float],
    model: str = "projected",
    evaluator: str = "imhof",
) -> RocCurve:
    points = _attacker_points(scenario)
    h0, h1 = _specs(scenario, points[0], model)
    if len(points) == 1:
        curve = analytic_roc(h0, h1, threshold_grid, evaluator=evaluator)
    else:
        per_point = [
            analytic_roc(h0, _specs(scenario, p, model)[1], threshold_grid, evaluator=evaluator)
            for p in points
        ]
        pd = np.mean([[pt.pd for pt in c.points] for c in per_point], axis=0)
        curve = RocCurve(
            points=tuple(
                RocPoint(threshold=pt.threshold, pfa=pt.pfa, pd=float(v))
                for pt, v in zip(per_point[0].points, pd)
            ),
            provenance="analytic",
        )
    return RocCurve(
        points=curve.points,
        provenance="analytic",
        fingerprint=scenario.fingerprint,
        seed=scenario.seed,
        metadata={"model": model, "evaluator": evaluator},
    )


# ---------------------------------------------------------------------------
# Sweep and gap rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    eps_th: float
    far_analytic: float
    mdr_analytic: float
    far_empirical: float
    mdr_empirical: float
    ci_far: float
    ci_mdr: float
    trials: int
    seed: int
    far_baseline: float = NAN
    mdr_baseline: float = NAN

    def as_row(self) -> list:
        return [getattr(self, name) for name in SWEEP_COLUMNS]

    def summary(self) -> str:
        return (
            f"{self.axis}={self.value:g} eps={self.eps_th:g} "
            f"FAR analytic={self.far_analytic:.4g} empirical={self.far_empirical:.4g} "
            f"MDR analytic={self.mdr_analytic:.4g} empirical={self.mdr_empirical:.4g}"
        )


def point_row(
    scenario: Scenario,
    axis: str,
    value: float,
    mode: str = "both",
    model: str = "projected",
    evaluator: str = "imhof",
    workers: int | None = None,
) -> SweepRow:
    far_a = mdr_a = far_b = mdr_b = NAN
    rates: ErrorRates | None = None
    # The analytic laws follow the channel model, so an override leaves them blank.
    if mode in ("analytic", "both") and scenario.sigma_override is None:
        far_a, mdr_a = analytic_rates(scenario, model, evaluator)
        if mode == "analytic":
            far_b, mdr_b = analytic_baseline_rates(scenario)
    if mode in ("montecarlo", "both"):
        rates = run_trials(scenario, workers)
    return SweepRow(
        axis=axis,
        value=float(value),
        eps_th=scenario.threshold,
        far_analytic=far_a,
        mdr_analytic=mdr_a,
        far_empirical=rates.empirical_far if rates else NAN,
        mdr_empirical=rates.empirical_mdr if rates else NAN,
        ci_far=rates.ci_far if rates else NAN,
        ci_mdr=rates.ci_mdr if rates else NAN,
        trials=scenario.trials,
        seed=scenario.seed,
        far_baseline=rates.baseline_far if rates else far_b,
        mdr_baseline=rates.baseline_mdr if rates else mdr_b,
    )


def sweep_rows(
    template: Scenario,
    axis: str,
    values: Sequence[float],
    mode: str = "both",
    model: str = "projected",
    evaluator: str = "imhof",
    workers: int | None = None,
) -> list[SweepRow]:
    rows = []
    for scenario, value in zip(sweep_scenarios(template, axis, values), values):
        row = point_row(scenario, axis, value, mode, model, evaluator, workers)
        logger.info(row.summary())
        rows.append(row)
    return rows


@dataclass(frozen=True)
class GapRow:
    axis: str
    value: float
    eps_th: float
    far_unprojected: float
    far_projected: float
    far_empirical: float
    mdr_unprojected: float
    mdr_projected: float
    mdr_empirical: float
    trials: int
    seed: int

    def as_row(self) -> list:
        return [getattr(self, name) for name in GAP_COLUMNS]

    @property
    def within_tolerance(self) -> bool:
        """Projected model inside max(3 binomial sigma, 0.005) of the empirical rates."""
        def ok(pred: float, emp: float) -> bool:
            sigma = math.sqrt(max(pred * (1.0 - pred), 0.0) / self.trials)
            return abs(pred - emp) <= max(3.0 * sigma, 0.005)

        return ok(self.far_projected, self.far_empirical) and ok(self.mdr_projected, self.mdr_empirical)


def gap_rows(
    template: Scenario,
    axis: str,
    values: Sequence[float],
    evaluator: str = "imhof",
    workers: int | None = None,
) -> list[GapRow]:
    rows = []
    for scenario, value in zip(sweep_scenarios(template, axis, values), values):
        far_p, mdr_p = analytic_rates(scenario, "unprojected", evaluator)
        far_j, mdr_j = analytic_rates(scenario, "projected", evaluator)
        rates = run_trials(scenario, workers)
        row = GapRow(
            axis=axis,
            value=float(value),
            eps_th=scenario.threshold,
            far_unprojected=far_p,
            far_projected=far_j,
            far_empirical=rates.empirical_far,
            mdr_unprojected=mdr_p,
            mdr_projected=mdr_j,
            mdr_empirical=rates.empirical_mdr,
            trials=scenario.trials,
            seed=scenario.seed,
        )
        if not row.within_tolerance:
            logger.warning("linearization gap exceeds tolerance at %s=%g", axis, value)
        rows.append(row)
    return rows


def roc_rows(curve: RocCurve) -> list[list]:
    seed = curve.seed if curve.seed is not None else ""
    return [[p.threshold, p.pfa, p.pd, curve.provenance, seed] for p in curve.points]


# ---------------------------------------------------------------------------
# Figure recipes
# ---------------------------------------------------------------------------


@dataclass
class FigureTable:
    figure: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    summary: list[str] = field(default_factory=list)
    crossover_radius: float | None = None


def _scenario_with(
    config: ExperimentConfig, anchors=None, attacker: AttackerModel | None = None
) -> Scenario:
    base = config.build_scenario()
    if anchors is None and attacker is None:
        return base
    system = LocalizationSystem.from_anchors(anchors) if anchors is not None else base.system
    return base.with_updates(
        system=system,
        legitimate=LegitimateProfile.enroll(system, config.legitimate),
        attacker=attacker or base.attacker,
    )


def _fig2_fig3(config: ExperimentConfig, figure: str, workers: int | None) -> FigureTable:
    template = _scenario_with(config)
    rows = sweep_rows(
        template, "link_quality_db", FIG_LQ_DB, config.mode, config.analytic_model,
        config.evaluator, workers,
    )
    table = FigureTable(figure=figure, columns=FIGURE_COLUMNS[figure])
    for r in rows:
        if figure == "fig2":
            table.rows.append([r.value, r.eps_th, r.far_analytic, r.far_empirical, r.ci_far,
                               r.far_baseline, r.trials, r.seed])
        else:
            table.rows.append([r.value, r.eps_th, r.mdr_analytic, r.mdr_empirical, r.ci_mdr,
                               r.mdr_baseline, r.trials, r.seed])
        table.summary.append(f"{figure} {r.summary()}")
    return table


def _fig4(config: ExperimentConfig, workers: int | None) -> FigureTable:
    template = _scenario_with(config, attacker=AttackerModel.circle(FIG4_RADII_M[0]))
    table = FigureTable(figure="fig4", columns=FIGURE_COLUMNS["fig4"])
    mdr_by_lq: dict[float, list[float]] = {}
    for lq in FIG4_LQ_DB:
        at_lq = template.with_updates(channel=template.channel.with_link_quality(lq))
        rows = sweep_rows(
            at_lq, "radius_R", FIG4_RADII_M, config.mode, config.analytic_model,
            config.evaluator, workers,
        )
        for r in rows:
            table.rows.append([r.value, lq, r.eps_th, r.mdr_analytic, r.mdr_empirical, r.ci_mdr,
                               r.trials, r.seed])
            table.summary.append(f"fig4 lq_db={lq:g} {r.summary()}")
        mdr_by_lq[lq] = [r.mdr_empirical if config.mode != "analytic" else r.mdr_analytic for r in rows]
    table.crossover_radius = crossover_radius(
        FIG4_RADII_M, mdr_by_lq[max(FIG4_LQ_DB)], mdr_by_lq[min(FIG4_LQ_DB)]
    )
    table.summary.append(f"fig4 crossover_radius_m={table.crossover_radius}")
    return table


def _fig5(config: ExperimentConfig, workers: int | None) -> FigureTable:
    if len(config.anchors) < max(FIG5_ANCHOR_COUNTS):
        raise DomainError(f"fig5 needs {max(FIG5_ANCHOR_COUNTS)} anchors in the config")
    table = FigureTable(figure="fig5", columns=FIGURE_COLUMNS["fig5"])
    index = 0
    for name, pos in FIG5_LOCATIONS:
        for count in FIG5_ANCHOR_COUNTS:
            for lq in FIG5_LQ_DB:
                scenario = _scenario_with(
                    config, anchors=config.anchors[:count], attacker=AttackerModel.fixed(*pos)
                )
                scenario = scenario.with_updates(
                    channel=scenario.channel.with_link_quality(lq),
                    seed=derive_subseed(config.seed, index),
                )
                index += 1
                grid = config.roc.grid() if config.roc else default_threshold_grid(
                    scenario, config.analytic_model
                )
                curves = []
                if config.mode in ("analytic", "both"):
                    curves.append(
                        analytic_roc_for(scenario, grid, config.analytic_model, config.evaluator)
                    )
                if config.mode in ("montecarlo", "both"):
                    curves.append(empirical_roc(scenario, grid, workers))
                for curve in curves:
                    for p in curve.points:
                        table.rows.append([name, count, lq, p.threshold, p.pfa, p.pd,
                                           curve.provenance, scenario.seed])
                    table.summary.append(
                        f"fig5 {name} L={count} lq_db={lq:g} {curve.provenance} "
                        f"pd@pfa0.1={curve.pd_at_pfa(0.1):.4g}"
                    )
    return table


def figure_table(config: ExperimentConfig, figure: str, workers: int | None = None) -> FigureTable:
    if figure in ("fig2", "fig3"):
        return _fig2_fig3(config, figure, workers)
    if figure == "fig4":
        return _fig4(config, workers)
    if figure == "fig5":
        return _fig5(config, workers)
    raise DomainError(f"unknown figure recipe {figure!r}; expected one of {FIGURES}")


# ---------------------------------------------------------------------------
# Entry point shared by the CLI and the job runner
# ---------------------------------------------------------------------------


@dataclass
class ExperimentOutcome:
    files: list[str] = field(default_factory=list)
    summary: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"files": self.files, "summary": self.summary}


def output_path(config: ExperimentConfig, default_name: str, out: str | Path | None = None) -> Path:
    if out is not None:
        return Path(out)
    if config.output:
        return Path(config.output)
    return Path(settings.output_root) / default_name


def run_point(
    config: ExperimentConfig, mode: str, out: str | Path | None = None, workers: int | None = None
) -> ExperimentOutcome:
    scenario = config.build_scenario()
    row = point_row(
        scenario, "threshold", scenario.threshold, mode, config.analytic_model,
        config.evaluator, workers,
    )
    path = output_path(config, f"{mode}.csv", out)
    export.write_csv(path, SWEEP_COLUMNS, [row.as_row()])
    return ExperimentOutcome(files=[str(path)], summary=[row.summary()])


def run_roc(
    config: ExperimentConfig, out: str | Path | None = None, workers: int | None = None
) -> ExperimentOutcome:
    scenario = config.build_scenario()
    if config.roc:
        grid = config.roc.grid()
    else:
        grid = default_threshold_grid(scenario, config.analytic_model)
    outcome = ExperimentOutcome()
    curves = []
    if config.mode in ("analytic", "both"):
        curves.append(analytic_roc_for(scenario, grid, config.analytic_model, config.evaluator))
    if config.mode in ("montecarlo", "both"):
        curves.append(empirical_roc(scenario, grid, workers))
    rows: list[list] = []
    for curve in curves:
        rows += roc_rows(curve)
        outcome.summary += [
            f"{curve.provenance} threshold={p.threshold:g} pfa={p.pfa:.6g} pd={p.pd:.6g}"
            for p in curve.points
        ]
    path = output_path(config, "roc.csv", out)
    export.write_csv(path, ROC_COLUMNS, rows)
    outcome.files.append(str(path))
    return outcome


def _require_sweep(config: ExperimentConfig):
    if config.sweep is None:
        raise ConfigError([("sweep", "this command needs a [sweep] table with axis and values")])
    return config.sweep


def run_sweep(
    config: ExperimentConfig, out: str | Path | None = None, workers: int | None = None
) -> ExperimentOutcome:
    spec = _require_sweep(config)
    rows = sweep_rows(
        config.build_scenario(), spec.axis, spec.values, config.mode, config.analytic_model,
        config.evaluator, workers,
    )
    path = output_path(config, "sweep.csv", out)
    export.write_csv(path, SWEEP_COLUMNS, [r.as_row() for r in rows])
    return ExperimentOutcome(files=[str(path)], summary=[r.summary() for r in rows])


def run_gap(
    config: ExperimentConfig, out: str | Path | None = None, workers: int | None = None
) -> ExperimentOutcome:
    spec = _require_sweep(config)
    rows = gap_rows(config.build_scenario(), spec.axis, spec.values, config.evaluator, workers)
    path = output_path(config, "gap.csv", out)
    export.write_csv(path, GAP_COLUMNS, [r.as_row() for r in rows])
    summary = [
        f"{r.axis}={r.value:g} FAR unprojected={r.far_unprojected:.4g} projected={r.far_projected:.4g} "
        f"empirical={r.far_empirical:.4g} MDR unprojected={r.mdr_unprojected:.4g} "
        f"projected={r.mdr_projected:.4g} empirical={r.mdr_empirical:.4g} "
        f"within_tolerance={r.within_tolerance}"
        for r in rows
    ]
    return ExperimentOutcome(files=[str(path)], summary=summary)


def run_figure(
    config: ExperimentConfig, figure: str, out: str | Path | None = None, workers: int | None = None
) -> ExperimentOutcome:
    table = figure_table(config, figure, workers)
    path = output_path(config, f"{figure}.csv", out)
    export.write_csv(path, table.columns, table.rows)
    stub = export.write_gnuplot_stub(path, figure)
    return ExperimentOutcome(files=[str(path), str(stub)], summary=table.summary)


def run_experiment(
    config: ExperimentConfig, out: str | Path | None = None, workers: int | None = None
) -> ExperimentOutcome:
    """Run what the config describes: a figure recipe, a sweep, a ROC grid or one point."""
    if config.figure:
        return run_figure(config, config.figure, out, workers)
    if config.sweep:
        return run_sweep(config, out, workers)
    if config.roc:
        return run_roc(config, out, workers)
    return run_point(config, config.mode, out, workers)
