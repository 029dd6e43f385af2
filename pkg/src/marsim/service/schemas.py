"""Request/response models for the HTTP service.

Endpoints operate on server-local file paths: the service is a compute
daemon wrapping the core package, not a file store.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorResponse(BaseModel):
    error_type: Literal["config", "data"]
    detail: str


class SampleInfo(BaseModel):
    index: int
    clean: str
    artifact: str
    target: str
    alpha_r: float
    seed: int


class GenerateRequest(BaseModel):
    config_path: str = Field(description="Path to a pipeline config file on the server")
    workers: Optional[int] = Field(default=None, ge=1)


class GenerateResponse(BaseModel):
    manifest: str
    n_samples: int
    samples: list[SampleInfo]
    failures: list[str]


class MetricRowModel(BaseModel):
    volume_id: str
    method: str
    psnr: Optional[float] = None
    rmse: Optional[float] = None
    ssim: Optional[float] = None
    skipped: bool = False


class EvaluateRequest(BaseModel):
    manifest: str
    methods: list[Literal["li", "bhc", "nmar", "external"]]
    out_csv: str
    external_dir: Optional[str] = None
    hu_threshold: float = 2500.0
    n_views: Optional[int] = Field(default=None, ge=4)


class EvaluateResponse(BaseModel):
    table: str
    per_slice_table: str
    rows: list[MetricRowModel]


class BaselineRequest(BaseModel):
    method: Literal["li", "bhc", "nmar"]
    in_path: str
    out_path: str
    hu_threshold: float = 2500.0
    n_views: Optional[int] = Field(default=None, ge=4)


class BaselineResponse(BaseModel):
    out_path: str


class ExportSlicesRequest(BaseModel):
    in_path: str
    axis: Literal["x", "y", "z"] = "z"
    indices: list[int]
    out_dir: str


class ExportSlicesResponse(BaseModel):
    files: list[str]


class ScatterBankRequest(BaseModel):
    phantom: Literal["head"] = "head"
    out_path: str
    histories: int = Field(default=1_000_000, ge=1)
    seed: int = 0
    n_views: int = Field(default=360, ge=4)
    n_detectors: int = Field(default=128, ge=8)
    max_scatters: int = Field(default=1, ge=1)


class ScatterBankResponse(BaseModel):
    out_path: str
    n_histories: int
    primary_mean: float
    scatter_mean: float


class MetricsRequest(BaseModel):
    a_path: str
    b_path: str


class MetricsResponse(BaseModel):
    psnr_db: float
    rmse: float
    ssim: float
    identical: bool


class SimulateRequest(BaseModel):
    in_path: str
    out_path: str
    config_path: Optional[str] = None
    seed: Optional[int] = None


class SimulateResponse(BaseModel):
    out_path: str
