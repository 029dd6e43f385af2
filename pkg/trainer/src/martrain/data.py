"""Manifest-backed paired dataset.

Volumes are HU files from the generation pipeline.  Network tensors use an
ingestion window mapping [-1000, 3071] HU onto [0.2, 1.0]: keeping air away
from zero keeps the Retinex term's |Y| divisor bounded, so the 5e-5-weighted
loss stays the mild regularizer it is meant to be.  Inference maps outputs
back onto the [0, 1] scale the metric tables use.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .io import ManifestEntry, read_manifest, read_marv

HU_LO = -1000.0
HU_SPAN = 4071.0
AIR_FLOOR = 0.2  # ingestion value of -1000 HU


def normalize_hu(data: np.ndarray) -> np.ndarray:
    """[-1000, 3071] HU -> [0, 1] (the metric-table window)."""
    return np.clip((data.astype(np.float32) - HU_LO) / HU_SPAN, 0.0, 1.0)


def ingest_hu(data: np.ndarray) -> np.ndarray:
    """[-1000, 3071] HU -> [AIR_FLOOR, 1], the network's working scale."""
    return AIR_FLOOR + (1.0 - AIR_FLOOR) * normalize_hu(data)


def ingested_to_normalized(data: np.ndarray) -> np.ndarray:
    return np.clip((data - AIR_FLOOR) / (1.0 - AIR_FLOOR), 0.0, 1.0)


@dataclass(frozen=True)
class Sample:
    index: int
    artifact: torch.Tensor   # (1, 1, D, H, W), GAN input I^m
    target: torch.Tensor     # augmented clean target I^train
    clean: torch.Tensor      # artifact-free I^nm (discriminator real input)


class PairedDataset:
    def __init__(self, manifest_path, dtype: torch.dtype = torch.float32):
        self.entries: list[ManifestEntry] = read_manifest(manifest_path)
        if not self.entries:
            raise ValueError(f"manifest {manifest_path} has no samples")
        self.dtype = dtype
        dims = None
        for e in self.entries:
            for p in (e.clean, e.artifact, e.target):
                if not Path(p).is_file():
                    raise FileNotFoundError(p)
            shape = read_marv(e.clean).data.shape
            if dims is None:
                dims = shape
            elif shape != dims:
                raise ValueError(f"inconsistent sample dims: {shape} vs {dims}")
        self.dims = dims

    def __len__(self) -> int:
        return len(self.entries)

    def _tensor(self, path) -> torch.Tensor:
        vol = read_marv(path)
        return torch.from_numpy(ingest_hu(vol.data))[None, None].to(self.dtype)

    def __getitem__(self, i: int) -> Sample:
        e = self.entries[i]
        return Sample(
            index=e.index,
            artifact=self._tensor(e.artifact),
            target=self._tensor(e.target),
            clean=self._tensor(e.clean),
        )
