"""Pydantic request/response models for the experiment service.

Request fields are all optional; whatever the client leaves unset falls back
to the library defaults during manifest resolution, so the service and the
CLI resolve configurations identically.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: Optional[Literal["mnist", "blobs"]] = None
    mnist_dir: Optional[str] = None
    blob_classes: Optional[int] = None
    blob_per_class: Optional[int] = None
    blob_dim: Optional[int] = None
    blob_separation: Optional[float] = None
    blob_std: Optional[float] = None
    blob_test_per_class: Optional[int] = None
    noise: Optional[Literal["none", "symmetric", "class-conditional", "matrix"]] = None
    eta: Optional[float] = None
    matrix_file: Optional[str] = None
    flips: Optional[str] = None
    selector: Optional[Literal["bare", "small-loss", "spl", "none"]] = None
    kappa: Optional[float] = None
    keep_fraction: Optional[float] = None
    spl_lambda: Optional[float] = None
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    lr: Optional[float] = None
    hidden: Optional[str] = None
    trials: Optional[int] = None
    seed: Optional[int] = None
    train_fraction: Optional[float] = None
    val_count: Optional[int] = None
    patience: Optional[int] = None
    factor: Optional[float] = None
    min_lr: Optional[float] = None
    monitor: Optional[Literal["train_loss", "val_acc"]] = None
    dtype: Optional[Literal["float32", "float64"]] = None

    def provided_values(self) -> dict:
        return self.model_dump(exclude_none=True)


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    axis: Literal["kappa", "batch_size", "eta"]
    values: list[float]
    run: RunRequest = RunRequest()


class JobCreated(BaseModel):
    id: str
    kind: Literal["run", "sweep"]
    manifest: dict


class JobStatus(BaseModel):
    id: str
    kind: Literal["run", "sweep"]
    state: Literal["queued", "running", "done", "failed"]
    trials_total: int
    trials_done: int
    epochs_total: int
    epochs_done: int
    cells_total: int = 1
    cells_done: int = 0
    error: Optional[str] = None


class RunSummaryResponse(BaseModel):
    id: str
    manifest: dict
    summary: dict


class SweepSummaryResponse(BaseModel):
    id: str
    axis: str
    values: list[float]
    table: list[dict]


class HealthResponse(BaseModel):
    status: str
    version: str
