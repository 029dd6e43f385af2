"""Classical metal artifact reduction baselines.

All three methods work slice by slice in 2-D on purpose (no cross-slice
coupling): linear sinogram interpolation over the metal trace (marLI), a
polynomial beam-hardening-style correction of the trace bins (marBHC) and
prior-normalized interpolation (NMAR).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, FullyShadowedViewError
from .projector import (
    FanBeamGeometry,
    Sinogram,
    fanbeam_project,
    fanbeam_reconstruct,
)
from .volume import (
    HU_MAX,
    HU_MIN,
    Volume3D,
    VolumeKind,
    WaterMuTable,
    attenuation_to_hu,
    hu_to_attenuation,
)

log = logging.getLogger(__name__)

DEFAULT_METAL_THRESHOLD_HU = 2500.0
NMAR_AIR_HU = -300.0     # class split air / soft
NMAR_BONE_HU = 400.0     # class split soft / bone
NMAR_EPS = 1e-3
BASELINE_ENERGY_KEV = 70.0


class TraceSource(enum.Enum):
    FROM_IMAGE_THRESHOLD = "from_image_threshold"
    PROVIDED = "provided"


@dataclass(frozen=True, eq=False)
class MetalTrace:
    """Boolean mask over sinogram bins shadowed by metal."""

    data: np.ndarray       # (n_views, n_detectors) bool
    source: TraceSource = TraceSource.FROM_IMAGE_THRESHOLD

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=bool)
        if d.ndim != 2:
            raise ArgumentError("trace must be a 2-D boolean array")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def empty(self) -> bool:
        return not self.data.any()


def detect_metal(vol: Volume3D, hu_threshold: float = DEFAULT_METAL_THRESHOLD_HU) -> Volume3D:
    """Threshold mask of metal voxels, keeping components of >= 8 voxels."""
    if vol.kind != VolumeKind.HU:
        raise ArgumentError(f"expected HU volume, got {vol.kind.name}")
    if not 0 < hu_threshold <= HU_MAX:
        raise ArgumentError(f"threshold {hu_threshold} outside (0, {HU_MAX:g}]")
    raw = vol.data >= hu_threshold
    labelled, n = ndimage.label(raw)
    if n:
        sizes = np.bincount(labelled.ravel())
        keep = np.zeros(n + 1, dtype=bool)
        keep[1:] = sizes[1:] >= 8
        raw = keep[labelled]
    return Volume3D(raw.astype(np.float32), vol.spacing, VolumeKind.MASK)


def metal_trace(mask: Volume3D, geom: FanBeamGeometry) -> list[MetalTrace]:
    """Per-slice sinogram trace: bins whose ray passes through the mask."""
    if mask.kind != VolumeKind.MASK:
        raise ArgumentError(f"expected Mask volume, got {mask.kind.name}")
    nx, ny, nz = mask.dims
    limit = 0.5 * min(mask.spacing[0], mask.spacing[1])
    traces = []
    for z in range(nz):
        p = fanbeam_project(mask.data[z], mask.spacing[:2], geom,
                            slice_index=z, check_coverage=False)
        traces.append(MetalTrace(p.data > limit))
    return traces


def _trace_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """[start, stop) index pairs of consecutive True runs."""
    idx = np.nonzero(row)[0]
    if idx.size == 0:
        return []
    splits = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate([[idx[0]], idx[splits + 1]])
    stops = np.concatenate([idx[splits] + 1, [idx[-1] + 1]])
    return list(zip(starts.tolist(), stops.tolist()))


def _run_anchors(start: int, stop: int, covered: np.ndarray) -> tuple[int, int]:
    """Anchor bins defining the affine replacement for one trace run.

    Uses the nearest untouched bin on each side; if a side is missing (run
    touching the row end) the two nearest bins of the other side are used,
    extrapolating linearly.  A row with a single untouched bin degenerates
    to a constant fill (equal anchors).
    """
    n = covered.size
    left = start - 1
    while left >= 0 and covered[left]:
        left -= 1
    right = stop
    while right < n and covered[right]:
        right += 1
    if left >= 0 and right < n:
        return left, right
    if left < 0 and right < n:
        second = right + 1
        while second < n and covered[second]:
            second += 1
        return (right, second) if second < n else (right, right)
    if right >= n and left >= 0:
        second = left - 1
        while second >= 0 and covered[second]:
            second -= 1
        return (second, left) if second >= 0 else (left, left)
    raise FullyShadowedViewError("view fully covered by metal trace")


def _interp_row(row: np.ndarray, covered: np.ndarray) -> np.ndarray:
    """Replace covered bins by per-run affine interpolation/extrapolation."""
    out = row.copy()
    for start, stop in _trace_runs(covered):
        a0, a1 = _run_anchors(start, stop, covered)
        slope = (row[a1] - row[a0]) / (a1 - a0) if a1 != a0 else 0.0
        xs = np.arange(start, stop)
        out[start:stop] = row[a0] + slope * (xs - a0)
    return out


def mar_li(sino: Sinogram, trace: MetalTrace) -> Sinogram:
    """Linear interpolated replacement of trace bins, view by view."""
    if trace.data.shape != sino.data.shape:
        raise ArgumentError("trace shape does not match sinogram")
    if trace.empty:
        return sino
    out = np.array(sino.data)
    for v in range(out.shape[0]):
        covered = trace.data[v]
        if not covered.any():
            continue
        if covered.all():
            raise FullyShadowedViewError(f"view {v} fully covered by metal trace")
        out[v] = _interp_row(out[v], covered)
    return Sinogram(out, sino.geometry, sino.slice_index)


def mar_bhc(
    sino: Sinogram,
    trace: MetalTrace,
    fit_window: int = 8,
) -> tuple[Sinogram, list[int]]:
    """Polynomial (cubic) correction of trace bins, fitted per view on
    (raw -> affine-ideal) pairs from untouched bins adjacent to the trace.

    Returns the corrected sinogram and the list of views that fell back to
    plain linear interpolation (fewer than 4 usable fit samples)."""
    if trace.data.shape != sino.data.shape:
        raise ArgumentError("trace shape does not match sinogram")
    if trace.empty:
        return sino, []
    out = np.array(sino.data)
    fallback_views: list[int] = []
    for v in range(out.shape[0]):
        covered = trace.data[v]
        if not covered.any():
            continue
        if covered.all():
            raise FullyShadowedViewError(f"view {v} fully covered by metal trace")
        row = out[v]
        raw_pts: list[float] = []
        ideal_pts: list[float] = []
        for start, stop in _trace_runs(covered):
            a0, a1 = _run_anchors(start, stop, covered)
            slope = (row[a1] - row[a0]) / (a1 - a0) if a1 != a0 else 0.0
            # untouched bins next to the run, up to fit_window per side
            for side in (range(start - 1, start - 1 - fit_window, -1),
                         range(stop, stop + fit_window)):
                for b in side:
                    if 0 <= b < row.size and not covered[b]:
                        raw_pts.append(row[b])
                        ideal_pts.append(row[a0] + slope * (b - a0))
        corrected = None
        if len(raw_pts) >= 4:
            raw_arr = np.asarray(raw_pts)
            ideal_arr = np.asarray(ideal_pts)
            centre = raw_arr.mean()
            scale = raw_arr.std()
            if scale > 0:
                try:
                    with np.errstate(all="ignore"):
                        fit = np.polyfit((raw_arr - centre) / scale, ideal_arr, 3, full=True)
                    if fit[2] >= 4:  # full rank only
                        corrected = np.polyval(fit[0], (row[covered] - centre) / scale)
                except np.linalg.LinAlgError:
                    corrected = None
        if corrected is None:
            fallback_views.append(v)
            out[v] = _interp_row(row, covered)
        else:
            out[v] = row.copy()
            out[v][covered] = corrected
    if fallback_views:
        log.info("mar_bhc: %d views fell back to linear interpolation", len(fallback_views))
    return Sinogram(out, sino.geometry, sino.slice_index), fallback_views


def _fov_mask(nx: int, ny: int, sx: float, sy: float, geom: FanBeamGeometry) -> np.ndarray:
    """Pixels inside the circle covered by every view.

    Reconstructed (noisy) volumes carry signal all the way to the grid
    corners; baselines mask the input to the scanned FOV before projecting
    and restore the original values outside it afterwards."""
    x = (np.arange(nx) - (nx - 1) / 2.0) * sx
    y = (np.arange(ny) - (ny - 1) / 2.0) * sy
    gx, gy = np.meshgrid(x, y)
    return gx * gx + gy * gy <= geom.coverage_radius_mm**2


def _nmar_prior_hu(vol: Volume3D, mask: Volume3D) -> np.ndarray:
    """Three-class (air/soft/bone) piecewise-constant prior; metal voxels
    are treated as soft tissue."""
    hu = vol.data.astype(np.float64)
    metal = mask.data == 1.0
    work = np.where(metal, 0.0, hu)
    air = work < NMAR_AIR_HU
    bone = work >= NMAR_BONE_HU
    soft = ~air & ~bone
    prior = np.empty_like(work)
    defaults = {"air": -1000.0, "soft": 0.0, "bone": 1500.0}
    for cls, m, dflt in (("air", air, defaults["air"]),
                         ("soft", soft, defaults["soft"]),
                         ("bone", bone, defaults["bone"])):
        prior[m] = work[m].mean() if m.any() else dflt
    return prior


def nmar(
    vol: Volume3D,
    mask: Volume3D,
    geom: FanBeamGeometry | None = None,
    table: WaterMuTable | None = None,
) -> Volume3D:
    """Normalized MAR: interpolate the trace on the prior-normalized
    sinogram, denormalize, reconstruct and re-insert the metal voxels."""
    if vol.kind != VolumeKind.HU or mask.kind != VolumeKind.MASK:
        raise ArgumentError("nmar needs an HU volume and a Mask volume")
    if vol.dims != mask.dims:
        raise ArgumentError(f"dims mismatch: {vol.dims} vs {mask.dims}")
    table = table or WaterMuTable.default()
    nx, ny, nz = vol.dims
    sx, sy, _ = vol.spacing
    if geom is None:
        geom = FanBeamGeometry.for_slice(nx, ny, sx, sy)

    fov = _fov_mask(nx, ny, sx, sy, geom)
    mu = hu_to_attenuation(vol, BASELINE_ENERGY_KEV, table)
    mu_fov = mu.data * fov
    prior_hu = _nmar_prior_hu(vol, mask)
    prior_mu = np.clip(
        table.mu_water(BASELINE_ENERGY_KEV) * (1.0 + prior_hu / 1000.0), 0.0, None
    ) * fov
    traces = metal_trace(mask, geom)

    out = np.empty((nz, ny, nx))
    metal = mask.data == 1.0
    for z in range(nz):
        sino = fanbeam_project(mu_fov[z], (sx, sy), geom, slice_index=z,
                               check_coverage=False)
        covered = traces[z].data
        if not covered.any():
            rec = fanbeam_reconstruct(sino, (ny, nx), (sx, sy))
            out[z] = attenuation_to_hu(rec, BASELINE_ENERGY_KEV, table)
            continue
        prior_sino = fanbeam_project(
            prior_mu[z], (sx, sy), geom, slice_index=z, check_coverage=False
        )
        denom = np.maximum(prior_sino.data, NMAR_EPS)
        fixed = np.array(sino.data)
        for v in range(geom.n_views):
            row_cov = covered[v]
            if not row_cov.any():
                continue
            if row_cov.all():
                raise FullyShadowedViewError(f"slice {z} view {v} fully covered")
            if np.any(prior_sino.data[v][row_cov] <= NMAR_EPS):
                # prior vanishes on the trace: interpolate the raw row
                fixed[v] = _interp_row(sino.data[v], row_cov)
            else:
                norm_row = sino.data[v] / denom[v]
                fixed[v] = _interp_row(norm_row, row_cov) * denom[v]
                fixed[v][~row_cov] = sino.data[v][~row_cov]
        rec = fanbeam_reconstruct(Sinogram(fixed, geom, z), (ny, nx), (sx, sy))
        out[z] = attenuation_to_hu(rec, BASELINE_ENERGY_KEV, table)

    out[:, ~fov] = vol.data[:, ~fov]
    out[metal] = vol.data[metal]
    np.clip(out, HU_MIN, HU_MAX, out=out)
    return Volume3D(out, vol.spacing, VolumeKind.HU)


def _volume_sinogram_mar(
    vol: Volume3D,
    method: str,
    hu_threshold: float,
    geom: FanBeamGeometry | None,
    table: WaterMuTable | None,
) -> tuple[Volume3D, list[int]]:
    """Shared driver for the sinogram-domain baselines (li, bhc)."""
    table = table or WaterMuTable.default()
    nx, ny, nz = vol.dims
    sx, sy, _ = vol.spacing
    if geom is None:
        geom = FanBeamGeometry.for_slice(nx, ny, sx, sy)
    mask = detect_metal(vol, hu_threshold)
    traces = metal_trace(mask, geom)
    fov = _fov_mask(nx, ny, sx, sy, geom)
    mu = hu_to_attenuation(vol, BASELINE_ENERGY_KEV, table)
    mu_fov = mu.data * fov
    out = np.empty((nz, ny, nx))
    fallbacks: list[int] = []
    for z in range(nz):
        sino = fanbeam_project(mu_fov[z], (sx, sy), geom, slice_index=z,
                               check_coverage=False)
        if method == "li":
            fixed = mar_li(sino, traces[z])
        else:
            fixed, fb = mar_bhc(sino, traces[z])
            fallbacks.extend(fb)
        rec = fanbeam_reconstruct(fixed, (ny, nx), (sx, sy))
        out[z] = attenuation_to_hu(rec, BASELINE_ENERGY_KEV, table)
    out[:, ~fov] = vol.data[:, ~fov]
    np.clip(out, HU_MIN, HU_MAX, out=out)
    return Volume3D(out, vol.spacing, VolumeKind.HU), fallbacks


def run_baseline(
    vol: Volume3D,
    method: str,
    hu_threshold: float = DEFAULT_METAL_THRESHOLD_HU,
    geom: FanBeamGeometry | None = None,
    table: WaterMuTable | None = None,
) -> Volume3D:
    """Volume-level entry point for the named baseline (li, bhc, nmar)."""
    if method in ("li", "bhc"):
        out, _ = _volume_sinogram_mar(vol, method, hu_threshold, geom, table)
        return out
    if method == "nmar":
        mask = detect_metal(vol, hu_threshold)
        return nmar(vol, mask, geom, table)
    raise ArgumentError(f"unknown baseline method {method!r}")
