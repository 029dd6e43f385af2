"""FastAPI application wrapping the core package.

Error mapping: configuration problems return 422 with ``error_type:
config``; bad data / missing files return 400 with ``error_type: data``.
The CLI maps these onto its exit codes (2 and 3).
"""

from __future__ import annotations

from dataclasses import replace

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..baselines import run_baseline
from ..errors import ConfigError, MarsimError
from ..phantom import make_head_phantom
from ..physics import SimulationConfig, simulate_artifacts
from ..pipeline import (
    PipelineConfig,
    cmd_evaluate,
    cmd_export_slices,
    cmd_generate,
)
from ..projector import FanBeamGeometry
from ..quality import metrics
from ..scatter import trace_photons, write_scatter_bank
from ..volume import EnergySpectrum, normalize_for_metrics, read_volume, write_volume
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="marsim", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc):
        return JSONResponse(
            status_code=422,
            content=schemas.ErrorResponse(error_type="config", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(MarsimError)
    async def _data_error(request, exc):
        return JSONResponse(
            status_code=400,
            content=schemas.ErrorResponse(error_type="data", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(OSError)
    async def _os_error(request, exc):
        # missing inputs, unwritable outputs, ...
        return JSONResponse(
            status_code=400,
            content=schemas.ErrorResponse(error_type="data", detail=str(exc)).model_dump(),
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        cfg = PipelineConfig.from_file(req.config_path)
        result = cmd_generate(cfg, workers=req.workers)
        return schemas.GenerateResponse(
            manifest=result.manifest_path,
            n_samples=len(result.samples),
            samples=[schemas.SampleInfo(**vars(s)) for s in result.samples],
            failures=list(result.failures),
        )

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        result = cmd_evaluate(
            req.manifest,
            req.methods,
            req.out_csv,
            external_dir=req.external_dir,
            hu_threshold=req.hu_threshold,
            n_views=req.n_views,
        )
        rows = [
            schemas.MetricRowModel(
                volume_id=r.volume_id, method=r.method,
                psnr=r.psnr_db, rmse=r.rmse, ssim=r.ssim, skipped=r.skipped,
            )
            for r in result.rows
        ]
        return schemas.EvaluateResponse(
            table=result.table_path, per_slice_table=result.per_slice_path, rows=rows
        )

    @app.post("/baseline", response_model=schemas.BaselineResponse)
    def baseline(req: schemas.BaselineRequest):
        vol = read_volume(req.in_path)
        geom = None
        if req.n_views is not None:
            nx, ny, _ = vol.dims
            geom = FanBeamGeometry.for_slice(
                nx, ny, vol.spacing[0], vol.spacing[1], n_views=req.n_views
            )
        out = run_baseline(vol, req.method, hu_threshold=req.hu_threshold, geom=geom)
        write_volume(out, req.out_path)
        return schemas.BaselineResponse(out_path=req.out_path)

    @app.post("/export-slices", response_model=schemas.ExportSlicesResponse)
    def export_slices(req: schemas.ExportSlicesRequest):
        files = cmd_export_slices(req.in_path, req.axis, req.indices, req.out_dir)
        return schemas.ExportSlicesResponse(files=files)

    @app.post("/scatter-bank", response_model=schemas.ScatterBankResponse)
    def scatter_bank(req: schemas.ScatterBankRequest):
        phantom = make_head_phantom()
        nx, ny, _ = phantom.dims
        geom = FanBeamGeometry.for_slice(
            nx, ny, phantom.spacing[0], phantom.spacing[1],
            n_views=req.n_views, n_detectors=req.n_detectors,
        )
        bank = trace_photons(
            phantom, geom, EnergySpectrum.default_140kvp(),
            req.histories, seed=req.seed, max_scatters=req.max_scatters,
        )
        write_scatter_bank(bank, req.out_path)
        return schemas.ScatterBankResponse(
            out_path=req.out_path,
            n_histories=bank.n_histories,
            primary_mean=float(bank.primary.mean()),
            scatter_mean=float(bank.scatter.mean()),
        )

    @app.post("/metrics", response_model=schemas.MetricsResponse)
    def compute_metrics(req: schemas.MetricsRequest):
        a = normalize_for_metrics(read_volume(req.a_path))
        b = normalize_for_metrics(read_volume(req.b_path))
        rep = metrics(a, b)
        return schemas.MetricsResponse(
            psnr_db=rep.psnr_db, rmse=rep.rmse, ssim=rep.ssim, identical=rep.identical
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        vol = read_volume(req.in_path)
        if req.config_path is not None:
            pc = PipelineConfig.from_file(req.config_path)
            pc.validate_files()
            sim = SimulationConfig(
                spectrum=pc.spectrum,
                scatter_enabled=pc.scatter_enabled,
                alpha_r=pc.alpha_r,
                noise_sigma2=pc.noise_sigma2,
                rng_seed=pc.seed,
                n_views=pc.n_views,
                n_detectors=pc.n_detectors,
            )
            bank = None
            if pc.scatter_enabled:
                from ..scatter import read_scatter_bank

                bank = read_scatter_bank(pc.scatter_bank_path)
            if req.seed is not None:
                sim = replace(sim, rng_seed=req.seed)
            out = simulate_artifacts(vol, sim, scatter_bank=bank, table=pc.water_table())
        else:
            sim = SimulationConfig(rng_seed=req.seed or 0)
            out = simulate_artifacts(vol, sim)
        write_volume(out, req.out_path)
        return schemas.SimulateResponse(out_path=req.out_path)

    return app


app = create_app()
