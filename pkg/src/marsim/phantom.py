"""Synthetic cochlea and head phantoms, signed distance maps and electrode
insertion.

The cochlea stand-in is a logarithmic spiral ``r(theta) = a * exp(-b*theta)``
rising linearly in z, carved as a fluid-filled duct into a bone-like
ellipsoid; the head phantom is a set of nested ellipsoids labelled with the
seven standard materials (air, water, bone, muscle, titanium, soft tissue,
fat).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, GeometryError
from .volume import METAL_HU, Volume3D, VolumeKind, WaterMuTable


class Material(NamedTuple):
    name: str
    density_g_cm3: float


AIR = 0
WATER = 1
BONE = 2
MUSCLE = 3
TITANIUM = 4
SOFT_TISSUE = 5
FAT = 6

MATERIAL_TABLE: dict[int, Material] = {
    AIR: Material("air", 0.001205),
    WATER: Material("water", 1.000),
    BONE: Material("bone", 1.990),
    MUSCLE: Material("muscle", 1.041),
    TITANIUM: Material("titanium", 4.506),
    SOFT_TISSUE: Material("soft_tissue", 1.038),
    FAT: Material("fat", 0.916),
}

# default HU levels for the synthetic cochlea volume
BONE_HU = 1500.0
DUCT_HU = 50.0
AIR_HU = -1000.0


@dataclass(frozen=True)
class CochleaSpiral:
    """Logarithmic spiral descriptor for the duct centre-line."""

    basal_radius_mm: float = 2.8
    taper_rate: float = 0.12          # b in r = a * exp(-b*theta)
    turns: float = 2.5
    height_mm: float = 4.0
    duct_radius_mm: float = 0.5

    def __post_init__(self):
        if self.basal_radius_mm <= 0:
            raise ArgumentError("basal_radius_mm must be positive")
        if not 0 < self.turns <= 3:
            raise ArgumentError("turns must be in (0, 3]")
        if self.duct_radius_mm <= 0:
            raise ArgumentError("duct_radius_mm must be positive")

    @property
    def theta_max(self) -> float:
        return 2.0 * np.pi * self.turns

    def points(self, thetas: np.ndarray) -> np.ndarray:
        """Centre-line points (N, 3) in mm, centred on the spiral origin."""
        th = np.asarray(thetas, dtype=np.float64)
        r = self.basal_radius_mm * np.exp(-self.taper_rate * th)
        z = self.height_mm * (th / self.theta_max - 0.5)
        return np.stack([r * np.cos(th), r * np.sin(th), z], axis=-1)

    def centerline(self, n_samples: int = 512) -> np.ndarray:
        return self.points(np.linspace(0.0, self.theta_max, n_samples))

    def speed(self, thetas: np.ndarray) -> np.ndarray:
        """|d p / d theta|, analytic."""
        th = np.asarray(thetas, dtype=np.float64)
        r = self.basal_radius_mm * np.exp(-self.taper_rate * th)
        dz = self.height_mm / self.theta_max
        return np.sqrt(r * r * (1.0 + self.taper_rate**2) + dz * dz)

    def arc_length_table(self, n: int = 20000) -> tuple[np.ndarray, np.ndarray]:
        """Dense (theta, cumulative arc length) table via trapezoid rule."""
        th = np.linspace(0.0, self.theta_max, n)
        sp = self.speed(th)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (sp[1:] + sp[:-1]) * np.diff(th))])
        return th, s


@dataclass(frozen=True, eq=False)
class ElectrodeArray:
    """Electrode centres along the duct centre-line at fixed arc pitch."""

    centers_mm: np.ndarray   # (K, 3)
    electrode_count: int
    pitch_mm: float

    def __post_init__(self):
        c = np.ascontiguousarray(self.centers_mm, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ArgumentError("centers_mm must have shape (K, 3)")
        if c.shape[0] != self.electrode_count:
            raise ArgumentError("electrode_count does not match centers")
        c.setflags(write=False)
        object.__setattr__(self, "centers_mm", c)


@dataclass(frozen=True, eq=False)
class MaterialPhantom:
    """Labelled voxel grid plus material table."""

    labels: np.ndarray       # (nz, ny, nx) uint8
    spacing: tuple[float, float, float]
    table: dict[int, Material] = field(default_factory=lambda: dict(MATERIAL_TABLE))
    phantom_id: str = "custom"

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if lab.ndim != 3:
            raise ArgumentError("labels must be a 3-D array")
        present = set(np.unique(lab).tolist())
        missing = present - set(self.table)
        if missing:
            raise ArgumentError(f"labels {sorted(missing)} missing from material table")
        if any(s <= 0 for s in self.spacing):
            raise ArgumentError("spacing components must be positive")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.labels.shape
        return (nx, ny, nz)

    def density_lut(self) -> np.ndarray:
        lut = np.zeros(max(self.table) + 1, dtype=np.float64)
        for label, mat in self.table.items():
            lut[label] = mat.density_g_cm3
        return lut

    def mu_lut(self, energy_kev: float, water: WaterMuTable | None = None) -> np.ndarray:
        """Per-label linear attenuation [1/mm]: density-scaled water mu."""
        water = water or WaterMuTable.default()
        return self.density_lut() * water.mu_water(energy_kev)


def _voxel_centers(dims, spacing):
    nx, ny, nz = dims
    sx, sy, sz = spacing
    x = (np.arange(nx) - (nx - 1) / 2.0) * sx
    y = (np.arange(ny) - (ny - 1) / 2.0) * sy
    z = (np.arange(nz) - (nz - 1) / 2.0) * sz
    return x, y, z


def signed_distance(
    polyline: np.ndarray,
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    radius_mm: float,
) -> Volume3D:
    """Signed distance to the tube of ``radius_mm`` around a polyline.

    Value = (min point-to-segment distance) - radius; negative inside the
    tube.  The polyline is in physical mm, origin at the grid centre.
    """
    pts = np.asarray(polyline, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise ArgumentError("polyline must be an (N>=2, 3) array")
    nx, ny, nz = dims
    x, y, z = _voxel_centers(dims, spacing)
    gz, gy, gx = np.meshgrid(z, y, x, indexing="ij")
    vox = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    a = pts[:-1]
    seg = pts[1:] - a
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    dmin = np.full(vox.shape[0], np.inf)
    for i in range(a.shape[0]):
        d = vox - a[i]
        if seg_len2[i] > 0:
            t = np.clip(d @ seg[i] / seg_len2[i], 0.0, 1.0)
            d = d - t[:, None] * seg[i]
        np.minimum(dmin, np.einsum("ij,ij->i", d, d), out=dmin)
    sdf = np.sqrt(dmin) - radius_mm
    return Volume3D(sdf.reshape(nz, ny, nx), spacing, VolumeKind.DISTANCE)


def electrode_mask(sdf: Volume3D, threshold_mm: float) -> Volume3D:
    """Binary mask of voxels with signed distance <= threshold."""
    if sdf.kind != VolumeKind.DISTANCE:
        raise ArgumentError(f"expected Distance volume, got {sdf.kind.name}")
    mask = (sdf.data <= threshold_mm).astype(np.float32)
    return Volume3D(mask, sdf.spacing, VolumeKind.MASK)


def insert_metal(vol: Volume3D, mask: Volume3D) -> Volume3D:
    """Set masked voxels to the maximum detectable HU (3071)."""
    if vol.kind != VolumeKind.HU or mask.kind != VolumeKind.MASK:
        raise ArgumentError("insert_metal needs an HU volume and a Mask volume")
    if vol.dims != mask.dims:
        raise ArgumentError(f"dims mismatch: {vol.dims} vs {mask.dims}")
    out = np.where(mask.data == 1.0, np.float32(METAL_HU), vol.data)
    return Volume3D(out, vol.spacing, VolumeKind.HU)


def place_electrodes(
    spiral: CochleaSpiral,
    electrode_count: int = 12,
    pitch_mm: float = 1.0,
    offset_mm: float = 1.0,
) -> ElectrodeArray:
    """Electrode centres at fixed arc-length spacing from the basal end."""
    if electrode_count < 0:
        raise ArgumentError("electrode_count must be nonnegative")
    if electrode_count == 0:
        return ElectrodeArray(np.empty((0, 3)), 0, pitch_mm)
    th, s = spiral.arc_length_table()
    span = offset_mm + (electrode_count - 1) * pitch_mm
    if span > s[-1]:
        raise GeometryError(
            f"electrode span {span:.2f} mm exceeds duct length {s[-1]:.2f} mm"
        )
    targets = offset_mm + pitch_mm * np.arange(electrode_count)
    thetas = np.interp(targets, s, th)
    return ElectrodeArray(spiral.points(thetas), electrode_count, pitch_mm)


def _ramp(sdf: np.ndarray, width: float) -> np.ndarray:
    """Linear 0..1 occupancy ramp across the zero level set (1 inside)."""
    return np.clip(0.5 - sdf / width, 0.0, 1.0)


def make_cochlea_volume(
    spiral: CochleaSpiral,
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    centerline_samples: int = 512,
    sdf: Volume3D | None = None,
) -> Volume3D:
    """HU volume: bone-like ellipsoid with a fluid-filled spiral duct,
    air outside, one-voxel partial-volume ramps on the boundaries.

    ``sdf`` may carry a precomputed signed-distance map for the same spiral
    and grid to avoid recomputation."""
    nx, ny, nz = dims
    sx, sy, sz = spacing
    half = np.array([nx * sx, ny * sy, nz * sz]) / 2.0

    line = spiral.centerline(centerline_samples)
    reach = np.abs(line) + spiral.duct_radius_mm
    if np.any(reach.max(axis=0) >= half):
        raise GeometryError(
            f"duct extent {reach.max(axis=0)} mm exceeds grid half-size {half} mm"
        )

    # bone ellipsoid bounded by the inscribed xy circle so default fan-beam
    # geometry always covers it
    r_xy = 0.92 * 0.5 * min(nx * sx, ny * sy)
    r_z = 0.92 * 0.5 * nz * sz
    if np.any(reach.max(axis=0) >= np.array([r_xy, r_xy, r_z])):
        raise GeometryError("duct does not fit inside the bone region of the grid")

    if sdf is None:
        sdf = signed_distance(line, dims, spacing, spiral.duct_radius_mm)
    elif sdf.dims != tuple(dims):
        raise ArgumentError("precomputed sdf dims do not match the grid")

    x, y, z = _voxel_centers(dims, spacing)
    gz, gy, gx = np.meshgrid(z, y, x, indexing="ij")
    rho = np.sqrt((gx / r_xy) ** 2 + (gy / r_xy) ** 2 + (gz / r_z) ** 2)
    bone_sdf = (rho - 1.0) * min(r_xy, r_z)  # adequate near the boundary

    w = float(min(spacing))
    bone_occ = _ramp(bone_sdf, w)
    duct_occ = _ramp(sdf.data.astype(np.float64), w)

    hu = AIR_HU + (BONE_HU - AIR_HU) * bone_occ + (DUCT_HU - BONE_HU) * duct_occ * bone_occ
    return Volume3D(hu, spacing, VolumeKind.HU)


def augment_target(vol: Volume3D, electrodes: ElectrodeArray) -> Volume3D:
    """Mark the nearest voxel to each electrode centre with 3071 HU."""
    if vol.kind != VolumeKind.HU:
        raise ArgumentError(f"expected HU volume, got {vol.kind.name}")
    nx, ny, nz = vol.dims
    out = np.array(vol.data)
    for cx, cy, cz in electrodes.centers_mm:
        ix = int(round(cx / vol.spacing[0] + (nx - 1) / 2.0))
        iy = int(round(cy / vol.spacing[1] + (ny - 1) / 2.0))
        iz = int(round(cz / vol.spacing[2] + (nz - 1) / 2.0))
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            raise GeometryError(f"electrode centre ({cx}, {cy}, {cz}) mm outside grid")
        out[iz, iy, ix] = METAL_HU
    return Volume3D(out, vol.spacing, VolumeKind.HU)


def make_head_phantom(
    dims: tuple[int, int, int] = (64, 64, 64),
    spacing: tuple[float, float, float] = (3.0, 3.0, 3.0),
) -> MaterialPhantom:
    """Nested-ellipsoid head: fat skin, muscle, skull shell, soft-tissue
    interior, a water inner-ear pocket and a titanium insert near the
    temporal bone."""
    nx, ny, nz = dims
    if min(nx, ny, nz) < 64:
        raise ArgumentError("head phantom needs dims >= 64 in every direction")
    x, y, z = _voxel_centers(dims, spacing)
    gz, gy, gx = np.meshgrid(z, y, x, indexing="ij")

    r_xy = 0.5 * min(nx * spacing[0], ny * spacing[1])
    r_z = 0.5 * nz * spacing[2]

    def inside(fx: float, fz: float) -> np.ndarray:
        return (gx / (fx * r_xy)) ** 2 + (gy / (fx * r_xy)) ** 2 + (gz / (fz * r_z)) ** 2 <= 1.0

    labels = np.full((nz, ny, nx), AIR, dtype=np.uint8)
    labels[inside(0.92, 0.92)] = FAT
    labels[inside(0.86, 0.86)] = MUSCLE
    labels[inside(0.78, 0.78)] = BONE
    labels[inside(0.64, 0.64)] = SOFT_TISSUE

    def ball(cx: float, cy: float, cz: float, r: float) -> np.ndarray:
        return (gx - cx) ** 2 + (gy - cy) ** 2 + (gz - cz) ** 2 <= r * r

    pocket_c = 0.50 * r_xy
    labels[ball(pocket_c, 0.0, 0.0, 0.10 * r_xy)] = WATER
    labels[ball(0.52 * r_xy, 0.0, 0.0, 0.05 * r_xy)] = TITANIUM

    return MaterialPhantom(labels, spacing, dict(MATERIAL_TABLE), phantom_id="head")


def connected_component_count(mask: np.ndarray) -> int:
    _, n = ndimage.label(np.asarray(mask) > 0)
    return int(n)
