"""Polychromatic artifact synthesis.

Per axial slice the detector signal is modelled as

    L(bin) = sum_i  w_i * exp(-P_i(bin))  +  S(bin)
    L_final = clamp(L + N(0, sigma_e^2), 1e-8)
    effective sinogram = -ln(L_final)

where ``P_i`` is the fan-beam projection of the attenuation map at spectrum
energy ``E_i``, ``S`` the normalized scatter offset and the Gaussian noise
is drawn from a counter-based stream keyed by (volume seed, slice, bin).
The effective sinogram is reconstructed and mapped back to HU at the
spectrum's weight-averaged reference energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError
from .projector import FanBeamGeometry, Sinogram, fanbeam_project, fanbeam_reconstruct
from .rng import CounterRNG, derive_seed
from .volume import (
    EnergySpectrum,
    Volume3D,
    VolumeKind,
    WaterMuTable,
    attenuation_to_hu,
    hu_to_attenuation,
)

PHOTON_FLOOR = 1e-8
ALPHA_R_MIN = 0.001
ALPHA_R_MAX = 0.02

# seed-derivation tags (arbitrary distinct constants)
_TAG_NOISE = 101
_TAG_ALPHA = 102
_TAG_TRACE = 103


@dataclass(frozen=True)
class SimulationConfig:
    spectrum: EnergySpectrum = field(default_factory=EnergySpectrum.default_140kvp)
    scatter_enabled: bool = False
    alpha_r: float | str = 0.01          # scalar in [0.001, 0.02] or "random"
    noise_sigma2: float = 0.04
    rng_seed: int = 0
    geometry: FanBeamGeometry | None = None   # None: derived per slice
    n_views: int = 360
    n_detectors: int | None = None

    def __post_init__(self):
        if isinstance(self.alpha_r, str):
            if self.alpha_r != "random":
                raise ConfigError(f"alpha_r must be a number or 'random', got {self.alpha_r!r}")
        elif not ALPHA_R_MIN <= float(self.alpha_r) <= ALPHA_R_MAX:
            raise ConfigError(
                f"alpha_r {self.alpha_r} outside [{ALPHA_R_MIN}, {ALPHA_R_MAX}]"
            )
        if self.noise_sigma2 < 0:
            raise ConfigError("noise_sigma2 must be nonnegative")

    def resolve_alpha_r(self) -> float:
        """Fixed alpha_r for one volume; 'random' draws uniformly from the
        admissible range using the config seed."""
        if isinstance(self.alpha_r, str):
            rng = CounterRNG(derive_seed(self.rng_seed, _TAG_ALPHA))
            u = float(rng.uniform(0, 0))
            return ALPHA_R_MIN + u * (ALPHA_R_MAX - ALPHA_R_MIN)
        return float(self.alpha_r)

    def geometry_for(self, nx: int, ny: int, sx: float, sy: float) -> FanBeamGeometry:
        if self.geometry is not None:
            return self.geometry
        return FanBeamGeometry.for_slice(
            nx, ny, sx, sy, n_views=self.n_views, n_detectors=self.n_detectors
        )


def attenuation_stack(
    vol: Volume3D,
    spectrum: EnergySpectrum,
    table: WaterMuTable | None = None,
) -> list[Volume3D]:
    """One attenuation volume per spectrum sample."""
    table = table or WaterMuTable.default()
    return [hu_to_attenuation(vol, float(e), table) for e in spectrum.energies_kev]


def detector_noise(
    seed: int, slice_index: int, shape: tuple[int, int], sigma2: float
) -> np.ndarray:
    """Gaussian detector noise, one counter-based stream per (seed, slice,
    bin) so parallel slice schedules reproduce serial output."""
    if sigma2 == 0:
        return np.zeros(shape)
    rng = CounterRNG(derive_seed(seed, _TAG_NOISE))
    bins = np.arange(shape[0] * shape[1], dtype=np.uint64)
    z = rng.normal(np.uint64(slice_index), bins).reshape(shape)
    return np.sqrt(sigma2) * z


def polychromatic_sinogram(
    stack_slices: list[np.ndarray],
    spacing: tuple[float, float],
    spectrum: EnergySpectrum,
    geom: FanBeamGeometry,
    scatter: Sinogram | None = None,
    noise_sigma2: float = 0.0,
    seed: int = 0,
    slice_index: int = 0,
    check_coverage: bool = True,
) -> Sinogram:
    """Effective (-ln of detector signal) sinogram of one slice."""
    if len(stack_slices) != len(spectrum):
        raise ArgumentError(
            f"stack has {len(stack_slices)} slices but spectrum has {len(spectrum)}"
        )
    shape = (geom.n_views, geom.n_detectors)
    signal = np.zeros(shape)
    for w, sl in zip(spectrum.weights, stack_slices):
        p = fanbeam_project(sl, spacing, geom, slice_index=slice_index,
                            check_coverage=check_coverage)
        signal += w * np.exp(-p.data)
    if scatter is not None:
        if scatter.data.shape != shape:
            raise ArgumentError(
                f"scatter sinogram shape {scatter.data.shape} does not match {shape}"
            )
        signal = signal + scatter.data
    if noise_sigma2 > 0:
        signal = signal + detector_noise(seed, slice_index, shape, noise_sigma2)
    np.clip(signal, PHOTON_FLOOR, None, out=signal)
    return Sinogram(-np.log(signal), geom, slice_index)


def simulate_artifacts(
    vol_with_metal: Volume3D,
    cfg: SimulationConfig,
    scatter_bank=None,
    table: WaterMuTable | None = None,
    scatter_roi=None,
) -> Volume3D:
    """Full pipeline: attenuation stack, polychromatic detector model with
    optional scatter offset and electronic noise, FBP, back to HU."""
    from .scatter import RoiFootprint, sample_trace  # cycle-free local import

    if cfg.scatter_enabled and scatter_bank is None:
        raise ConfigError("scatter enabled but no scatter bank supplied")
    table = table or WaterMuTable.default()
    nx, ny, nz = vol_with_metal.dims
    sx, sy, _ = vol_with_metal.spacing
    geom = cfg.geometry_for(nx, ny, sx, sy)

    stack = attenuation_stack(vol_with_metal, cfg.spectrum, table)
    e_ref = cfg.spectrum.mean_energy_kev
    alpha_r = cfg.resolve_alpha_r()

    # attenuation outside the scanned FOV circle is treated as air, the same
    # truncation a real scanner applies; phantoms built by this package keep
    # their support inside the circle, so this is an identity for them
    x = (np.arange(nx) - (nx - 1) / 2.0) * sx
    y = (np.arange(ny) - (ny - 1) / 2.0) * sy
    gx, gy = np.meshgrid(x, y)
    fov = (gx * gx + gy * gy <= geom.coverage_radius_mm**2).astype(np.float64)

    scatter_sino = None
    if cfg.scatter_enabled:
        trace = sample_trace(
            scatter_bank,
            scatter_roi or RoiFootprint.default_head_roi(),
            geom,
            seed=derive_seed(cfg.rng_seed, _TAG_TRACE),
        )
        # same ratio alpha_r for every sinogram of this volume
        scale = scatter_bank.normalization_scale(alpha_r)
        scatter_sino = Sinogram(trace.data * scale, geom, 0)

    out = np.empty((nz, ny, nx))
    for z in range(nz):
        slices = [s.data[z] * fov for s in stack]
        eff = polychromatic_sinogram(
            slices, (sx, sy), cfg.spectrum, geom,
            scatter=scatter_sino, noise_sigma2=cfg.noise_sigma2,
            seed=cfg.rng_seed, slice_index=z, check_coverage=False,
        )
        mu_eff = fanbeam_reconstruct(eff, (ny, nx), (sx, sy))
        out[z] = attenuation_to_hu(mu_eff, e_ref, table)

    return Volume3D(out, vol_with_metal.spacing, VolumeKind.HU)
