"""Command-line interface.

Every subcommand builds the same request model the HTTP service accepts and
sends it through one of two transports: a remote server (``--server URL``)
or the in-process ASGI app (default).  Exit codes: 0 ok, 2 config error,
3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

from . import __version__
from .service import schemas

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import app

    return TestClient(app)


def _post(args, path: str, payload) -> tuple[int, dict]:
    with _client(args.server) as client:
        resp = client.post(path, json=payload.model_dump())
    try:
        body = resp.json()
    except json.JSONDecodeError:
        body = {"error_type": "data", "detail": resp.text}
    return resp.status_code, body


def _finish(status: int, body: dict, lines) -> int:
    if status == 200:
        for line in lines(body):
            print(line)
        return EXIT_OK
    detail = body.get("detail", "request failed")
    etype = body.get("error_type", "data")
    if isinstance(detail, list):  # pydantic validation errors
        etype = "config"
        detail = "; ".join(str(d.get("msg", d)) for d in detail)
    print(f"error ({etype}): {detail}", file=sys.stderr)
    return EXIT_CONFIG if etype == "config" else EXIT_DATA


def _cmd_generate(args) -> int:
    req = schemas.GenerateRequest(config_path=args.config, workers=args.workers)
    status, body = _post(args, "/generate", req)
    return _finish(status, body, lambda b: [
        f"manifest={b['manifest']}",
        f"n_samples={b['n_samples']}",
        *[f"failure={f}" for f in b["failures"]],
    ])


def _cmd_evaluate(args) -> int:
    req = schemas.EvaluateRequest(
        manifest=args.manifest,
        methods=args.methods.split(","),
        out_csv=args.out,
        external_dir=args.external_dir,
        hu_threshold=args.hu_threshold,
        n_views=args.views,
    )
    status, body = _post(args, "/evaluate", req)

    def lines(b):
        out = [f"table={b['table']}", f"per_slice_table={b['per_slice_table']}"]
        for r in b["rows"]:
            if r["volume_id"] == "mean":
                if r["skipped"]:
                    out.append(f"mean.{r['method']}=skipped")
                else:
                    out.append(
                        f"mean.{r['method']}.psnr_db={r['psnr']:.4f} "
                        f"rmse={r['rmse']:.6f} ssim={r['ssim']:.4f}"
                    )
        return out

    return _finish(status, body, lines)


def _cmd_baseline(args) -> int:
    req = schemas.BaselineRequest(
        method=args.method, in_path=args.in_path, out_path=args.out_path,
        hu_threshold=args.hu_threshold, n_views=args.views,
    )
    status, body = _post(args, "/baseline", req)
    return _finish(status, body, lambda b: [f"out={b['out_path']}"])


def _cmd_export_slices(args) -> int:
    try:
        indices = [int(x) for x in args.indices.split(",") if x.strip()]
    except ValueError:
        print("error (config): --indices must be comma-separated integers", file=sys.stderr)
        return EXIT_CONFIG
    req = schemas.ExportSlicesRequest(
        in_path=args.in_path, axis=args.axis, indices=indices, out_dir=args.out_dir
    )
    status, body = _post(args, "/export-slices", req)
    return _finish(status, body, lambda b: [f"file={f}" for f in b["files"]])


def _cmd_scatter_bank(args) -> int:
    req = schemas.ScatterBankRequest(
        phantom=args.phantom, out_path=args.out, histories=args.histories,
        seed=args.seed, n_views=args.views, n_detectors=args.detectors,
        max_scatters=args.max_scatters,
    )
    status, body = _post(args, "/scatter-bank", req)
    return _finish(status, body, lambda b: [
        f"out={b['out_path']}",
        f"n_histories={b['n_histories']}",
        f"primary_mean={b['primary_mean']:.6g}",
        f"scatter_mean={b['scatter_mean']:.6g}",
    ])


def _cmd_metrics(args) -> int:
    req = schemas.MetricsRequest(a_path=args.a, b_path=args.b)
    status, body = _post(args, "/metrics", req)
    return _finish(status, body, lambda b: [
        f"psnr_db={b['psnr_db']:.6g}",
        f"rmse={b['rmse']:.6g}",
        f"ssim={b['ssim']:.6g}",
        f"identical={'true' if b['identical'] else 'false'}",
    ])


def _cmd_simulate(args) -> int:
    req = schemas.SimulateRequest(
        in_path=args.in_path, out_path=args.out_path,
        config_path=args.config, seed=args.seed,
    )
    status, body = _post(args, "/simulate", req)
    return _finish(status, body, lambda b: [f"out={b['out_path']}"])


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="marsim",
        description="CT metal artifact simulation, MAR baselines and evaluation",
    )
    p.add_argument("--version", action="version", version=f"marsim {__version__}")
    p.add_argument("--server", default=None,
                   help="URL of a running marsim service; default runs in-process")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a paired dataset from a config file")
    g.add_argument("--config", required=True)
    g.add_argument("--workers", type=int, default=None)
    g.set_defaults(func=_cmd_generate)

    e = sub.add_parser("evaluate", help="evaluate MAR methods over a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--methods", default="li,bhc,nmar",
                   help="comma-separated subset of li,bhc,nmar,external")
    e.add_argument("--out", required=True, help="output CSV path")
    e.add_argument("--external-dir", default=None)
    e.add_argument("--hu-threshold", type=float, default=2500.0)
    e.add_argument("--views", type=int, default=None, help="override baseline view count")
    e.set_defaults(func=_cmd_evaluate)

    b = sub.add_parser("baseline", help="run one MAR baseline on a volume file")
    b.add_argument("--method", required=True, choices=["li", "bhc", "nmar"])
    b.add_argument("--in", dest="in_path", required=True)
    b.add_argument("--out", dest="out_path", required=True)
    b.add_argument("--hu-threshold", type=float, default=2500.0)
    b.add_argument("--views", type=int, default=None)
    b.set_defaults(func=_cmd_baseline)

    x = sub.add_parser("export-slices", help="export volume slices as PGM images")
    x.add_argument("--in", dest="in_path", required=True)
    x.add_argument("--axis", default="z", choices=["x", "y", "z"])
    x.add_argument("--indices", required=True, help="comma-separated indices")
    x.add_argument("--out-dir", required=True)
    x.set_defaults(func=_cmd_export_slices)

    s = sub.add_parser("scatter-bank", help="precompute a Monte Carlo scatter bank")
    s.add_argument("--phantom", default="head", choices=["head"])
    s.add_argument("--out", required=True)
    s.add_argument("--histories", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--views", type=int, default=360)
    s.add_argument("--detectors", type=int, default=128)
    s.add_argument("--max-scatters", type=int, default=1)
    s.set_defaults(func=_cmd_scatter_bank)

    m = sub.add_parser("metrics", help="PSNR/RMSE/SSIM between two volume files")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.set_defaults(func=_cmd_metrics)

    sim = sub.add_parser("simulate", help="simulate artifacts for one HU volume file")
    sim.add_argument("--in", dest="in_path", required=True)
    sim.add_argument("--out", dest="out_path", required=True)
    sim.add_argument("--config", default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.set_defaults(func=_cmd_simulate)

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(func=_cmd_serve)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except httpx.HTTPError as e:
        print(f"error (data): cannot reach server: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
