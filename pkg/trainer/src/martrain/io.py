"""Reader/writer for the dataset's volume files and manifests.

Implements the documented ``.marv`` format independently of the producing
package: little-endian, magic ``MARV1\\0``, u32 nx/ny/nz, f32 spacings, u8
kind code, 7 reserved bytes, then raw f32 values x-fastest (array shape
(nz, ny, nx)).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MARV1\x00"
HEADER = struct.Struct("<6s3I3fB7x")

KIND_HU = 0
KIND_ATTENUATION = 1
KIND_MASK = 2
KIND_DISTANCE = 3
KIND_NORMALIZED = 4


@dataclass(frozen=True)
class MarvVolume:
    data: np.ndarray                      # (nz, ny, nx) float32
    spacing: tuple[float, float, float]   # (sx, sy, sz) mm
    kind: int


def read_marv(path) -> MarvVolume:
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        raise ValueError(f"{path}: shorter than the fixed header")
    magic, nx, ny, nz, sx, sy, sz, kind = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    n = nx * ny * nz
    expected = HEADER.size + 4 * n
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(nz, ny, nx)
    return MarvVolume(data.copy(), (float(sx), float(sy), float(sz)), int(kind))


def write_marv(vol: MarvVolume, path) -> None:
    data = np.ascontiguousarray(vol.data, dtype="<f4")
    nz, ny, nx = data.shape
    header = HEADER.pack(
        MAGIC, nx, ny, nz,
        np.float32(vol.spacing[0]), np.float32(vol.spacing[1]), np.float32(vol.spacing[2]),
        vol.kind,
    )
    Path(path).write_bytes(header + data.tobytes())


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    clean: Path
    artifact: Path
    target: Path
    alpha_r: float
    seed: int


def read_manifest(path) -> list[ManifestEntry]:
    """Tab-separated manifest: index, clean, artifact, target, alpha_r, seed;
    paths relative to the manifest file, '#' lines are comments."""
    p = Path(path)
    base = p.parent
    entries = []
    for raw in p.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise ValueError(f"bad manifest row: {raw!r}")
        entries.append(
            ManifestEntry(
                int(cols[0]), base / cols[1], base / cols[2], base / cols[3],
                float(cols[4]), int(cols[5]),
            )
        )
    return entries
