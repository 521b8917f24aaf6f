"""FastAPI service: submit training runs and sweeps as background jobs,
poll their progress, and fetch metrics once they finish.

Jobs execute one at a time on a single worker thread; results live in
process memory. The CLI is a thin client of these endpoints.
"""

from __future__ import annotations

import queue
import threading
import uuid
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from .. import __version__, experiments
from ..errors import BarelabError
from .schemas import (HealthResponse, JobCreated, JobStatus, RunRequest,
                      RunSummaryResponse, SweepRequest, SweepSummaryResponse)


@dataclass
class Job:
    id: str
    kind: str  # "run" | "sweep"
    manifests: list[experiments.RunManifest]
    axis: Optional[str] = None
    values: Optional[list[float]] = None
    state: str = "queued"
    trials_done: int = 0
    epochs_done: int = 0
    cells_done: int = 0
    error: Optional[str] = None
    run_result: Optional[experiments.RunResult] = None
    sweep_result: Optional[experiments.SweepResult] = None

    @property
    def trials_total(self) -> int:
        return sum(m.trials for m in self.manifests)

    @property
    def epochs_total(self) -> int:
        return sum(m.trials * m.epochs for m in self.manifests)

    def status(self) -> JobStatus:
        return JobStatus(
            id=self.id, kind=self.kind, state=self.state,
            trials_total=self.trials_total, trials_done=self.trials_done,
            epochs_total=self.epochs_total, epochs_done=self.epochs_done,
            cells_total=len(self.manifests), cells_done=self.cells_done,
            error=self.error)


@dataclass
class JobRegistry:
    """In-memory job store with one sequential worker thread."""

    jobs: dict[str, Job] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    tasks: "queue.Queue[str]" = field(default_factory=queue.Queue)
    worker: Optional[threading.Thread] = None

    def submit(self, job: Job) -> Job:
        with self.lock:
            self.jobs[job.id] = job
            if self.worker is None:
                self.worker = threading.Thread(target=self._drain, daemon=True,
                                               name="barelab-jobs")
                self.worker.start()
        self.tasks.put(job.id)
        return job

    def get(self, job_id: str) -> Job:
        with self.lock:
            job = self.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job

    def _drain(self) -> None:
        while True:
            job_id = self.tasks.get()
            job = self.jobs[job_id]
            job.state = "running"
            try:
                self._execute(job)
                job.state = "done"
            except Exception as exc:  # surfaced via the status endpoint
                job.error = f"{type(exc).__name__}: {exc}"
                job.state = "failed"

    def _execute(self, job: Job) -> None:
        if job.kind == "run":
            manifest = job.manifests[0]

            def on_epoch(trial: int, epoch: int) -> None:
                job.trials_done = trial + (1 if epoch == manifest.epochs - 1 else 0)
                job.epochs_done = trial * manifest.epochs + epoch + 1

            job.run_result = experiments.execute_run(manifest, progress=on_epoch)
            job.trials_done = manifest.trials
            job.cells_done = 1
        else:
            runs = []
            epochs_base = 0
            for j, cell in enumerate(job.manifests):
                base = epochs_base

                def on_epoch(trial: int, epoch: int, _base=base, _cell=cell) -> None:
                    job.epochs_done = _base + trial * _cell.epochs + epoch + 1

                runs.append(experiments.execute_run(cell, progress=on_epoch))
                epochs_base += cell.trials * cell.epochs
                job.cells_done = j + 1
                job.trials_done += cell.trials
            job.sweep_result = experiments.SweepResult(
                axis=job.axis, values=list(job.values), runs=runs)


def create_app() -> FastAPI:
    app = FastAPI(title="barelab", version=__version__,
                  description="Noisy-label training runs as a job service")
    registry = JobRegistry()
    app.state.registry = registry

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/runs", response_model=JobCreated, status_code=201)
    def create_run(request: RunRequest):
        manifest = _resolve(request)
        job = registry.submit(Job(id=uuid.uuid4().hex[:12], kind="run", manifests=[manifest]))
        return JobCreated(id=job.id, kind="run", manifest=manifest.to_dict())

    @app.post("/sweeps", response_model=JobCreated, status_code=201)
    def create_sweep(request: SweepRequest):
        manifest = _resolve(request.run)
        try:
            cells = experiments.sweep_manifests(manifest, request.axis, request.values)
        except BarelabError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        job = registry.submit(Job(id=uuid.uuid4().hex[:12], kind="sweep", manifests=cells,
                                  axis=request.axis, values=list(request.values)))
        return JobCreated(id=job.id, kind="sweep", manifest=manifest.to_dict())

    @app.get("/runs", response_model=list[JobStatus])
    def list_jobs():
        with registry.lock:
            return [job.status() for job in registry.jobs.values()]

    @app.get("/runs/{job_id}", response_model=JobStatus)
    def job_status(job_id: str):
        return registry.get(job_id).status()

    @app.get("/runs/{job_id}/summary", response_model=RunSummaryResponse)
    def run_summary(job_id: str):
        job = _finished(registry.get(job_id), "run")
        return RunSummaryResponse(id=job.id, manifest=job.manifests[0].to_dict(),
                                  summary=job.run_result.summary())

    @app.get("/runs/{job_id}/trials/{trial}/metrics.csv", response_class=PlainTextResponse)
    def trial_csv(job_id: str, trial: int):
        job = _finished(registry.get(job_id), "run")
        trials = job.run_result.trials
        if not 0 <= trial < len(trials):
            raise HTTPException(status_code=404, detail=f"trial {trial} out of range")
        return PlainTextResponse(experiments.metrics_to_csv(trials[trial].history),
                                 media_type="text/csv")

    @app.get("/sweeps/{job_id}/summary", response_model=SweepSummaryResponse)
    def sweep_summary(job_id: str):
        job = _finished(registry.get(job_id), "sweep")
        return SweepSummaryResponse(id=job.id, axis=job.axis, values=job.values,
                                    table=job.sweep_result.table())

    @app.get("/sweeps/{job_id}/table.csv", response_class=PlainTextResponse)
    def sweep_table(job_id: str):
        job = _finished(registry.get(job_id), "sweep")
        return PlainTextResponse(job.sweep_result.table_csv(), media_type="text/csv")

    @app.get("/sweeps/{job_id}/cells/{cell}/trials/{trial}/metrics.csv",
             response_class=PlainTextResponse)
    def sweep_trial_csv(job_id: str, cell: int, trial: int):
        job = _finished(registry.get(job_id), "sweep")
        runs = job.sweep_result.runs
        if not 0 <= cell < len(runs):
            raise HTTPException(status_code=404, detail=f"cell {cell} out of range")
        trials = runs[cell].trials
        if not 0 <= trial < len(trials):
            raise HTTPException(status_code=404, detail=f"trial {trial} out of range")
        return PlainTextResponse(experiments.metrics_to_csv(trials[trial].history),
                                 media_type="text/csv")

    def _resolve(request: RunRequest) -> experiments.RunManifest:
        values = request.provided_values()
        try:
            return experiments.resolve_manifest(values, provided=set(values))
        except BarelabError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    def _finished(job: Job, kind: str) -> Job:
        if job.kind != kind:
            raise HTTPException(status_code=404, detail=f"job {job.id} is a {job.kind}")
        if job.state == "failed":
            raise HTTPException(status_code=500, detail=job.error)
        if job.state != "done":
            raise HTTPException(status_code=409, detail=f"job {job.id} is {job.state}")
        return job

    return app


app = create_app()
