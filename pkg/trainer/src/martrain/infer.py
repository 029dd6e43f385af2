"""Inference: load a checkpoint, run the generator on an artifact volume
file and write the result as a normalized volume the evaluation pipeline
accepts as an 'external' method."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import ingest_hu, ingested_to_normalized
from .io import KIND_NORMALIZED, MarvVolume, read_marv, write_marv
from .models import GeneratorNet


def load_generator(model_path) -> GeneratorNet:
    ckpt = torch.load(model_path, map_location="cpu", weights_only=True)
    g = GeneratorNet(ckpt["base_channels"], ckpt["depth"], ckpt["channel_cap"])
    g.load_state_dict(ckpt["generator"])
    g.eval()
    return g


def infer_volume(g: GeneratorNet, vol: MarvVolume) -> np.ndarray:
    """Normalized [0, 1] generator output with the input's shape."""
    x = torch.from_numpy(ingest_hu(vol.data))[None, None]
    f = g.downsampling_factor
    nz, ny, nx = vol.data.shape
    pad = [0, -nx % f, 0, -ny % f, 0, -nz % f]
    if any(pad):
        x = F.pad(x, pad, mode="replicate")
    with torch.no_grad():
        out = g(x)
    out = out[0, 0, :nz, :ny, :nx].numpy()
    return ingested_to_normalized(out).astype(np.float32)


def infer_file(model_path, in_path, out_path) -> str:
    g = load_generator(model_path)
    vol = read_marv(in_path)
    out = infer_volume(g, vol)
    write_marv(MarvVolume(out, vol.spacing, KIND_NORMALIZED), out_path)
    return str(Path(out_path))
