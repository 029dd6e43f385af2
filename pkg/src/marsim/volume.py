"""Voxel-grid data model, HU/attenuation conversions and volume file I/O.

Conventions used everywhere in the package:

* ``Volume3D.data`` has shape ``(nz, ny, nx)`` and dtype float32, C order,
  so the flattened buffer is x-fastest.  ``dims`` reports ``(nx, ny, nz)``.
* Physical coordinates are in millimetres with the origin at the grid
  centre; voxel ``(ix, iy, iz)`` is centred at
  ``((ix - (nx-1)/2)*sx, (iy - (ny-1)/2)*sy, (iz - (nz-1)/2)*sz)``.
* The ``.marv`` file format is little-endian: magic ``MARV1\\0``, u32
  ``nx, ny, nz``, f32 ``sx, sy, sz`` (mm), u8 kind code, 7 reserved bytes,
  then ``nx*ny*nz`` raw f32 values, x-fastest.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    ArgumentError,
    BadHeaderError,
    BadMagicError,
    DomainError,
    TruncatedFileError,
)

HU_MIN = -1024.0
HU_MAX = 3071.0
METAL_HU = 3071.0

_MAGIC = b"MARV1\x00"
_HEADER = struct.Struct("<6s3I3fB7x")
_MAX_VOXELS = 2**31 // 4  # payload must stay addressable as one f32 buffer


class VolumeKind(enum.IntEnum):
    HU = 0
    ATTENUATION = 1
    MASK = 2
    DISTANCE = 3
    NORMALIZED = 4


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Immutable scalar voxel grid with spacing metadata."""

    data: np.ndarray          # (nz, ny, nx) float32
    spacing: tuple[float, float, float]  # (sx, sy, sz) mm
    kind: VolumeKind

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ArgumentError(f"volume data must be 3-D, got shape {data.shape}")
        if len(self.spacing) != 3:
            raise ArgumentError("spacing must have three components")
        # spacing stored with f32 semantics so file round trips are exact
        spacing = tuple(float(np.float32(s)) for s in self.spacing)
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ArgumentError(f"spacing components must be positive, got {spacing}")
        self._check_kind_invariants(data, self.kind)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "kind", VolumeKind(self.kind))

    @staticmethod
    def _check_kind_invariants(data: np.ndarray, kind: VolumeKind):
        if not np.all(np.isfinite(data)):
            raise DomainError("volume data contains non-finite values")
        if kind == VolumeKind.HU:
            lo, hi = float(data.min()), float(data.max())
            if lo < HU_MIN or hi > HU_MAX:
                raise DomainError(
                    f"HU values outside [{HU_MIN:g}, {HU_MAX:g}]: [{lo:g}, {hi:g}]"
                )
        elif kind == VolumeKind.MASK:
            if not np.all((data == 0.0) | (data == 1.0)):
                raise DomainError("mask volume must contain only 0 and 1")
        elif kind == VolumeKind.NORMALIZED:
            lo, hi = float(data.min()), float(data.max())
            if lo < 0.0 or hi > 1.0:
                raise DomainError(f"normalized values outside [0, 1]: [{lo:g}, {hi:g}]")

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def n_voxels(self) -> int:
        return self.data.size

    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def with_data(self, data: np.ndarray, kind: VolumeKind | None = None) -> "Volume3D":
        return Volume3D(data, self.spacing, self.kind if kind is None else kind)

    def axis_coords(self, axis: int) -> np.ndarray:
        """Physical coordinates of voxel centres along x (0), y (1) or z (2)."""
        n = self.dims[axis]
        s = self.spacing[axis]
        return (np.arange(n) - (n - 1) / 2.0) * s


class WaterMuTable:
    """Monotone energy -> mu_water [1/mm] map with linear interpolation."""

    def __init__(self, energies_kev: np.ndarray, mu_per_mm: np.ndarray):
        e = np.asarray(energies_kev, dtype=np.float64)
        m = np.asarray(mu_per_mm, dtype=np.float64)
        if e.ndim != 1 or e.size < 2 or e.shape != m.shape:
            raise ArgumentError("water table needs matching 1-D energy/mu columns")
        if np.any(np.diff(e) <= 0):
            raise ArgumentError("water table energies must be strictly increasing")
        if np.any(m <= 0):
            raise ArgumentError("water table mu values must be positive")
        self.energies = e
        self.mu = m

    @classmethod
    def from_file(cls, path) -> "WaterMuTable":
        rows = []
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) != 2:
                raise ArgumentError(f"water table row needs 2 columns: {raw!r}")
            rows.append((float(cols[0]), float(cols[1])))
        if not rows:
            raise ArgumentError(f"water table {path} has no data rows")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def default(cls) -> "WaterMuTable":
        with resources.as_file(resources.files("marsim.data") / "water_mu.txt") as p:
            return cls.from_file(p)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.energies[0]), float(self.energies[-1])

    def mu_water(self, energy_kev: float) -> float:
        lo, hi = self.domain
        if not (lo <= energy_kev <= hi):
            raise DomainError(
                f"energy {energy_kev:g} keV outside water table domain [{lo:g}, {hi:g}]"
            )
        return float(np.interp(energy_kev, self.energies, self.mu))


@dataclass(frozen=True, eq=False)
class EnergySpectrum:
    """Sampled photon energies with normalized weights."""

    energies_kev: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies_kev, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if e.ndim != 1 or e.size < 1 or e.shape != w.shape:
            raise ArgumentError("spectrum needs matching 1-D energy/weight arrays")
        if np.any(e <= 0):
            raise DomainError("spectrum energies must be positive")
        if e.size > 1 and np.any(np.diff(e) <= 0):
            raise ArgumentError("spectrum energies must be strictly increasing")
        if np.any(w < 0) or w.sum() <= 0:
            raise ArgumentError("spectrum weights must be nonnegative with positive sum")
        w = w / w.sum()
        e.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "energies_kev", e)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.energies_kev.size

    @property
    def mean_energy_kev(self) -> float:
        return float(np.dot(self.energies_kev, self.weights))

    @classmethod
    def default_140kvp(cls) -> "EnergySpectrum":
        # five-point sampling of a 140 kVp tungsten tube output
        return cls(
            np.array([40.0, 60.0, 80.0, 100.0, 120.0]),
            np.array([0.12, 0.30, 0.28, 0.20, 0.10]),
        )

    @classmethod
    def mono(cls, energy_kev: float) -> "EnergySpectrum":
        return cls(np.array([energy_kev]), np.array([1.0]))


def hu_to_attenuation(vol: Volume3D, energy_kev: float, table: WaterMuTable | None = None) -> Volume3D:
    """Convert HU to linear attenuation [1/mm] at one energy.

    Uses the HU definition ``mu = mu_water(E) * (1 + HU/1000)`` and clamps
    negative results (HU below -1000) to zero.
    """
    if vol.kind != VolumeKind.HU:
        raise ArgumentError(f"expected HU volume, got {vol.kind.name}")
    table = table or WaterMuTable.default()
    mu_w = table.mu_water(energy_kev)
    out = mu_w * (1.0 + vol.data.astype(np.float64) / 1000.0)
    np.clip(out, 0.0, None, out=out)
    return Volume3D(out, vol.spacing, VolumeKind.ATTENUATION)


def attenuation_to_hu(mu: np.ndarray, energy_kev: float, table: WaterMuTable | None = None) -> np.ndarray:
    """Inverse of :func:`hu_to_attenuation`, clamped to the valid HU range."""
    table = table or WaterMuTable.default()
    mu_w = table.mu_water(energy_kev)
    hu = 1000.0 * (np.asarray(mu, dtype=np.float64) / mu_w - 1.0)
    return np.clip(hu, HU_MIN, HU_MAX)


def normalize_for_metrics(vol: Volume3D) -> Volume3D:
    """Affine map of [-1000, 3071] HU to [0, 1], clamped."""
    if vol.kind != VolumeKind.HU:
        raise ArgumentError(f"expected HU volume, got {vol.kind.name}")
    out = (vol.data.astype(np.float64) + 1000.0) / 4071.0
    np.clip(out, 0.0, 1.0, out=out)
    return Volume3D(out, vol.spacing, VolumeKind.NORMALIZED)


def write_volume(vol: Volume3D, path) -> None:
    nx, ny, nz = vol.dims
    header = _HEADER.pack(
        _MAGIC, nx, ny, nz,
        np.float32(vol.spacing[0]), np.float32(vol.spacing[1]), np.float32(vol.spacing[2]),
        int(vol.kind),
    )
    payload = np.ascontiguousarray(vol.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_volume(path) -> Volume3D:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the fixed header")
    magic, nx, ny, nz, sx, sy, sz, kind_code = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if nx == 0 or ny == 0 or nz == 0:
        raise BadHeaderError(f"{path}: zero dimension ({nx}, {ny}, {nz})")
    n = nx * ny * nz
    if n > _MAX_VOXELS:
        raise BadHeaderError(f"{path}: dim overflow ({nx}, {ny}, {nz})")
    if not all(np.isfinite(s) and s > 0 for s in (sx, sy, sz)):
        raise BadHeaderError(f"{path}: nonpositive spacing ({sx}, {sy}, {sz})")
    try:
        kind = VolumeKind(kind_code)
    except ValueError:
        raise BadHeaderError(f"{path}: unknown kind code {kind_code}") from None
    expected = _HEADER.size + 4 * n
    if len(blob) < expected:
        raise TruncatedFileError(
            f"{path}: payload truncated ({len(blob)} bytes, expected {expected})"
        )
    if len(blob) > expected:
        raise BadHeaderError(f"{path}: {len(blob) - expected} trailing bytes")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(nz, ny, nx)
    return Volume3D(data.copy(), (sx, sy, sz), kind)
