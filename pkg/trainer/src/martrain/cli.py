"""Command-line entry points: train on a manifest, run inference on volume
files, or export MAR volumes for a whole manifest."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .infer import infer_file, infer_volume, load_generator
from .io import KIND_NORMALIZED, MarvVolume, read_manifest, read_marv, write_marv
from .train import TrainConfig, train


def _cmd_train(args) -> int:
    cfg = TrainConfig(
        manifest_path=args.manifest,
        model_out=args.model_out,
        log_out=args.log_out,
        alpha=args.alpha,
        epochs=args.epochs,
        lr_g=args.lr_g,
        lr_d=args.lr_d,
        sigma_retinex=args.sigma_retinex,
        seed=args.seed,
    )
    result = train(cfg)
    first = result.epoch_mean(0, "l_mse")
    last = result.epoch_mean(cfg.epochs - 1, "l_mse")
    print(f"model={result.model_path}")
    if result.log_path:
        print(f"log={result.log_path}")
    print(f"epoch0_mean_l_mse={first:.6g}")
    print(f"final_mean_l_mse={last:.6g}")
    return 0


def _cmd_infer(args) -> int:
    out = infer_file(args.model, args.in_path, args.out_path)
    print(f"out={out}")
    return 0


def _cmd_export(args) -> int:
    g = load_generator(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for e in read_manifest(args.manifest):
        vol = read_marv(e.artifact)
        data = infer_volume(g, vol)
        dest = out_dir / f"sample_{e.index:04d}_mar.marv"
        write_marv(MarvVolume(data, vol.spacing, KIND_NORMALIZED), dest)
        print(f"out={dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="martrain", description="3D GAN MAR trainer")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a generated paired dataset")
    t.add_argument("--manifest", required=True)
    t.add_argument("--model-out", required=True)
    t.add_argument("--log-out", default=None, help="CSV loss log path")
    t.add_argument("--alpha", type=float, default=5e-5)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr-g", type=float, default=1e-4)
    t.add_argument("--lr-d", type=float, default=1e-3)
    t.add_argument("--sigma-retinex", type=float, default=3.0)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_train)

    i = sub.add_parser("infer", help="run the generator on one volume file")
    i.add_argument("--model", required=True)
    i.add_argument("--in", dest="in_path", required=True)
    i.add_argument("--out", dest="out_path", required=True)
    i.set_defaults(func=_cmd_infer)

    x = sub.add_parser("export", help="write MAR volumes for every manifest sample")
    x.add_argument("--model", required=True)
    x.add_argument("--manifest", required=True)
    x.add_argument("--out-dir", required=True)
    x.set_defaults(func=_cmd_export)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
