import math
from dataclasses import asdict

from fastapi import APIRouter, HTTPException

from app.models.config import ExperimentConfig
from app.services.errors import ConfigError, DomainError, NumericalFailureError
from app.services.experiments import analytic_baseline_rates, analytic_rates, run_experiment
from app.services.job_runner import job_runner
from app.services.simulator import run_trials
from app.settings import settings

router = APIRouter()


def _finite(value):
    return None if isinstance(value, float) and not math.isfinite(value) else value


def _raise_http(e: Exception):
    if isinstance(e, NumericalFailureError):
        raise HTTPException(
            status_code=500, detail={"error": str(e), "diagnostics": _jsonable(e.diagnostics)}
        )
    raise HTTPException(status_code=422, detail=str(e))


def _jsonable(diagnostics: dict) -> dict:
    return {
        k: _finite(v) if isinstance(v, (int, float, str)) else str(v)
        for k, v in diagnostics.items()
    }


@router.get("/debug/runtime")
def debug_runtime():
    return {
        "ok": True,
        "routes": {
            "analytic": "/api/analytic",
            "simulate": "/api/simulate",
            "experiment_async": "/api/jobs/experiment",
            "task_status": "/api/jobs/task/{job_id}",
        },
        "numerics": {
            "workers": settings.workers,
            "chunk_size": settings.chunk_size,
            "max_sync_trials": settings.max_sync_trials,
            "imhof_tolerance": settings.imhof_tolerance,
            "laguerre_max_terms": settings.laguerre_max_terms,
            "laguerre_tolerance": settings.laguerre_tolerance,
            "laguerre_term_cap": settings.laguerre_term_cap,
            "analytic_points": settings.analytic_points,
        },
        "timeouts": {"job_timeout_sec": settings.job_timeout_sec},
    }


@router.post("/analytic")
def analytic(payload: ExperimentConfig):
    try:
        scenario = payload.build_scenario()
        far, mdr = analytic_rates(scenario, payload.analytic_model, payload.evaluator)
        baseline_far, baseline_mdr = analytic_baseline_rates(scenario)
    except (DomainError, ConfigError, NumericalFailureError) as e:
        _raise_http(e)
    return {
        "ok": True,
        "fingerprint": scenario.fingerprint,
        "model": payload.analytic_model,
        "evaluator": payload.evaluator,
        "threshold": scenario.threshold,
        "far": far,
        "mdr": mdr,
        "baseline_far": baseline_far,
        "baseline_mdr": baseline_mdr,
    }


@router.post("/simulate")
def simulate(payload: ExperimentConfig):
    if payload.trials > settings.max_sync_trials:
        raise HTTPException(
            status_code=422,
            detail=f"trials={payload.trials} exceeds max_sync_trials={settings.max_sync_trials}; "
            "submit /api/jobs/experiment instead",
        )
    try:
        scenario = payload.build_scenario()
        rates = run_trials(scenario)
    except (DomainError, ConfigError, NumericalFailureError) as e:
        _raise_http(e)
    return {
        "ok": True,
        "fingerprint": scenario.fingerprint,
        "rates": {k: _finite(v) for k, v in asdict(rates).items()},
    }


@router.post("/jobs/experiment")
def submit_experiment(payload: ExperimentConfig):
    job = job_runner.submit_experiment(
        payload.model_dump(mode="json"), lambda: run_experiment(payload).as_dict()
    )
    return {"ok": True, "job_id": job.id, "status": job.status}


@router.get("/jobs/task/{job_id}")
def task_status(job_id: str):
    job = job_runner.get(job_id)
    if not job:
        raise HTTPException(status_code=404, detail="job not found")
    return {"ok": True, "job": {**job.snapshot(), "payload": job.payload}}


@router.post("/jobs/task/{job_id}/cancel")
def task_cancel(job_id: str):
    ok = job_runner.cancel(job_id)
    return {"ok": ok}
