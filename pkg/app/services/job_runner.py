from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable

from app.settings import settings

logger = logging.getLogger(__name__)

TERMINAL = {"done", "failed", "cancelled"}


@dataclass
class Job:
    id: str
    kind: str
    payload: dict[str, Any]
    timeout_sec: int | None = None
    status: str = "queued"  # queued|running|done|failed|cancelled
    created_at: float = field(default_factory=time.time)
    started_at: float | None = None
    finished_at: float | None = None
    result: Any = None
    error: str | None = None
    error_kind: str | None = None
    cancelled: bool = False

    def snapshot(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "created_at": self.created_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "result": self.result,
            "error": self.error,
            "error_kind": self.error_kind,
        }


class JobRunner:
    """Runs experiment jobs on daemon threads; one thread per job."""

    def __init__(self, start_delay_sec: float = 0.0) -> None:
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._start_delay_sec = start_delay_sec

    def submit(
        self,
        kind: str,
        payload: dict[str, Any],
        fn: Callable[[], Any],
        timeout_sec: int | None = None,
    ) -> Job:
        job = Job(id=uuid.uuid4().hex, kind=kind, payload=payload, timeout_sec=timeout_sec)
        with self._lock:
            self._jobs[job.id] = job
        logger.info("job %s (%s) queued", job.id, kind)

        t = threading.Thread(target=self._execute, args=(job, fn, timeout_sec), daemon=True)
        t.start()
        return job

    def submit_experiment(self, config_dump: dict[str, Any], fn: Callable[[], Any]) -> Job:
        return self.submit("experiment", config_dump, fn, timeout_sec=settings.job_timeout_sec)

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            job = self._jobs.get(job_id)
            if not job:
                return None
            # Watchdog: a running job whose worker outlived its timeout is failed here.
            if (
                job.status == "running"
                and job.started_at
                and job.timeout_sec
                and (time.time() - job.started_at) > (job.timeout_sec + 5)
            ):
                job.status = "failed"
                job.error = f"job watchdog timeout after {job.timeout_sec}s"
                job.error_kind = "timeout"
                job.finished_at = time.time()
            return job

    def list(self, kind: str | None = None) -> list[Job]:
        with self._lock:
            jobs = [j for j in self._jobs.values() if kind is None or j.kind == kind]
        return sorted(jobs, key=lambda j: j.created_at)

    def cancel(self, job_id: str) -> bool:
        """Cancellation is cooperative: only queued jobs stop; a running job finishes."""
        with self._lock:
            job = self._jobs.get(job_id)
            if not job or job.status in TERMINAL:
                return False
            job.cancelled = True
            if job.status == "queued":
                job.status = "cancelled"
                job.finished_at = time.time()
            return True

    def _execute(self, job: Job, fn: Callable[[], Any], timeout_sec: int | None) -> None:
        if self._start_delay_sec:
            time.sleep(self._start_delay_sec)
        with self._lock:
            if job.cancelled:
                job.status = "cancelled"
                job.finished_at = job.finished_at or time.time()
                return
            job.status = "running"
            job.started_at = time.time()

        try:
            if timeout_sec and timeout_sec > 0:
                box: dict[str, Any] = {}

                def _target():
                    try:
                        box["result"] = fn()
                    except Exception as e:
                        box["error"] = e

                t = threading.Thread(target=_target, daemon=True)
                t.start()
                t.join(timeout_sec)
                if t.is_alive():
                    raise TimeoutError(f"job timeout after {timeout_sec}s")
                if "error" in box:
                    raise box["error"]
                job.result = box.get("result")
            else:
                job.result = fn()
            job.status = "done"
            logger.info("job %s done", job.id)
        except Exception as e:
            job.error = str(e)
            job.error_kind = type(e).__name__
            job.status = "failed"
            logger.warning("job %s failed: %s", job.id, e)
        finally:
            job.finished_at = time.time()


job_runner = JobRunner()
