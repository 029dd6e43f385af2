"""Monte Carlo Compton scatter estimation on a labelled phantom.

Photons are transported in the phantom's central axial plane: launched from
the fan-beam source with spectrum-sampled energies, free paths drawn from
exponential attenuation (per-material mu = density-scaled water mu), Compton
scattering with Klein-Nishina angular sampling (Kahn's rejection method) and
a simple photoelectric termination model.  Unscattered photons that reach
the detector arc tally into the primary sinogram ``F``; photons arriving
after at least one scatter tally into the scatter offset ``S~`` weighted by
their residual energy.

Every history draws from its own counter-based stream keyed by
``(seed, history_index)``, so results do not depend on batch size or
execution order; tallies are merged in a fixed reduction order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ArgumentError,
    BadHeaderError,
    BadMagicError,
    DegenerateBankError,
    DomainError,
    GeometryError,
    TruncatedFileError,
)
from .phantom import MaterialPhantom
from .projector import FanBeamGeometry, Sinogram
from .rng import CounterRNG, derive_seed
from .volume import EnergySpectrum, WaterMuTable

ELECTRON_REST_KEV = 511.0

_BANK_MAGIC = b"MARB1\x00"
_BANK_HEADER = struct.Struct("<6s2I2f2Q16s")


def compton_energy(energy_kev, beta_rad):
    """Photon energy after Compton scattering by angle ``beta``:
    E' = E / (1 + (E/511)(1 - cos beta))."""
    e = np.asarray(energy_kev, dtype=np.float64)
    if np.any(e <= 0):
        raise DomainError("photon energy must be positive")
    b = np.asarray(beta_rad, dtype=np.float64)
    out = e / (1.0 + (e / ELECTRON_REST_KEV) * (1.0 - np.cos(b)))
    if out.ndim == 0:
        return float(out)
    return out


def klein_nishina_pdf(cos_theta, energy_kev):
    """Unnormalized Klein-Nishina density over cos(theta)."""
    c = np.asarray(cos_theta, dtype=np.float64)
    alpha = float(energy_kev) / ELECTRON_REST_KEV
    x = 1.0 / (1.0 + alpha * (1.0 - c))          # E'/E
    return x * x * (x + 1.0 / x - (1.0 - c * c))


def _kahn_cos_theta(rng: CounterRNG, energy_kev: np.ndarray,
                    streams: np.ndarray, draws: np.ndarray):
    """Vectorized Kahn rejection sampling of the Compton scatter angle.

    Returns (cos_theta, draws_after): each rejection round consumes one
    counter block (three uniforms) from the photon's stream.
    """
    alpha = np.asarray(energy_kev, dtype=np.float64) / ELECTRON_REST_KEV
    n = alpha.size
    cos_t = np.empty(n)
    done = np.zeros(n, dtype=bool)
    draws = np.array(draws, dtype=np.uint64, copy=True)
    streams = np.asarray(streams, dtype=np.uint64)

    while not done.all():
        idx = np.nonzero(~done)[0]
        u = rng.uniform_words(streams[idx], draws[idx], 3)
        draws[idx] += np.uint64(1)
        a = alpha[idx]
        branch1 = u[:, 0] <= (1.0 + 2.0 * a) / (9.0 + 2.0 * a)
        eta = np.where(
            branch1,
            1.0 + 2.0 * a * u[:, 1],
            (1.0 + 2.0 * a) / (1.0 + 2.0 * a * u[:, 1]),
        )
        cos_cand = 1.0 - (eta - 1.0) / a
        accept1 = u[:, 2] <= 4.0 * (1.0 / eta - 1.0 / (eta * eta))
        accept2 = u[:, 2] <= 0.5 * (cos_cand * cos_cand + 1.0 / eta)
        accept = np.where(branch1, accept1, accept2)
        take = idx[accept]
        cos_t[take] = cos_cand[accept]
        done[take] = True
    return cos_t, draws


def sample_scatter_angles(energy_kev: float, n: int, seed: int = 0) -> np.ndarray:
    """n independent Klein-Nishina cos(theta) draws at one energy."""
    rng = CounterRNG(seed)
    streams = np.arange(n, dtype=np.uint64)
    cos_t, _ = _kahn_cos_theta(
        rng, np.full(n, float(energy_kev)), streams, np.zeros(n, dtype=np.uint64)
    )
    return cos_t


@dataclass(frozen=True)
class RoiFootprint:
    """Disk-shaped region of interest inside the scatter phantom, used to
    extract the sinogram band it subtends."""

    center_mm: tuple[float, float]
    radius_mm: float

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ArgumentError("footprint radius must be positive")

    @classmethod
    def default_head_roi(cls) -> "RoiFootprint":
        # matches the titanium/inner-ear site of the default 64^3 head
        # phantom at 3 mm spacing (r_xy = 96 mm)
        return cls((48.0, 0.0), 12.0)


@dataclass(frozen=True, eq=False)
class ScatterBank:
    """Precomputed primary (F) and scatter (S~) sinograms of one phantom."""

    geometry: FanBeamGeometry
    primary: np.ndarray      # F, (n_views, n_detectors)
    scatter: np.ndarray      # S~, (n_views, n_detectors)
    n_histories: int
    rng_seed: int
    phantom_id: str = "custom"

    def __post_init__(self):
        shape = (self.geometry.n_views, self.geometry.n_detectors)
        f = np.ascontiguousarray(self.primary, dtype=np.float64)
        s = np.ascontiguousarray(self.scatter, dtype=np.float64)
        if f.shape != shape or s.shape != shape:
            raise ArgumentError("bank sinogram shapes do not match geometry")
        if np.any(s < 0) or np.any(f < 0):
            raise ArgumentError("bank tallies must be nonnegative")
        f.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "primary", f)
        object.__setattr__(self, "scatter", s)

    def normalization_scale(self, alpha_r: float) -> float:
        """Scale factor mapping S~ to S with mean(S)/mean(F) == alpha_r."""
        if not 0.001 <= alpha_r <= 0.02:
            raise ArgumentError(f"alpha_r {alpha_r} outside [0.001, 0.02]")
        mean_s = float(self.scatter.mean())
        mean_f = float(self.primary.mean())
        if mean_s <= 0 or mean_f <= 0:
            raise DegenerateBankError(
                f"cannot normalize bank: mean(F)={mean_f:g}, mean(S~)={mean_s:g}"
            )
        return mean_f / mean_s * alpha_r


def normalize_scatter(bank: ScatterBank, alpha_r: float) -> Sinogram:
    """Scatter offset scaled so that mean(S)/mean(F) equals alpha_r."""
    scale = bank.normalization_scale(alpha_r)
    return Sinogram(bank.scatter * scale, bank.geometry, 0)


def _photoelectric_prob(energy_kev: np.ndarray) -> np.ndarray:
    # simple declining absorption model; prevents low-energy pileup
    return np.minimum(0.9, 0.15 * (40.0 / energy_kev) ** 3)


def trace_photons(
    phantom: MaterialPhantom,
    geom: FanBeamGeometry,
    spectrum: EnergySpectrum,
    n_histories: int,
    seed: int = 0,
    max_scatters: int = 1,
    photoelectric: bool = True,
    water: WaterMuTable | None = None,
    batch_size: int = 262144,
) -> ScatterBank:
    """Trace ``n_histories`` photons (split evenly across views) through the
    phantom's central axial slice and tally primary/scatter sinograms."""
    if n_histories < 1:
        raise ArgumentError("n_histories must be >= 1")
    if max_scatters < 1:
        raise ArgumentError("max_scatters must be >= 1")
    water = water or WaterMuTable.default()

    nx, ny, nz = phantom.dims
    sx, sy, _ = phantom.spacing
    labels2d = phantom.labels[nz // 2]
    density = phantom.density_lut()

    r_phantom = 0.5 * float(np.hypot(nx * sx, ny * sy))
    d_iso = geom.source_to_iso_mm
    if d_iso <= r_phantom:
        raise GeometryError("source inside the phantom bounding circle")
    r_detector = 2.0 * d_iso
    r_exit = r_phantom * 1.02
    ds = 0.5 * min(sx, sy)
    max_iter = int(np.ceil(2.2 * r_exit * (max_scatters + 1) / ds)) + 64

    n_views = geom.n_views
    per_view = int(np.ceil(n_histories / n_views))
    total = per_view * n_views
    gamma_half = geom.fan_half_angle_rad
    pitch = geom.detector_angular_pitch_rad
    n_det = geom.n_detectors
    betas = geom.betas()

    # water mu with edge clamping: scattered photons may fall below the
    # tabulated domain
    def mu_w(e):
        return np.interp(e, water.energies, water.mu)

    cum_w = np.cumsum(spectrum.weights)
    energies = spectrum.energies_kev

    rng = CounterRNG(derive_seed(seed, 7))
    f_tally = np.zeros((n_views, n_det))
    s_tally = np.zeros((n_views, n_det))

    for start in range(0, total, batch_size):
        hist = np.arange(start, min(start + batch_size, total), dtype=np.uint64)
        m = hist.size
        view = (hist // np.uint64(per_view)).astype(np.int64)
        beta = betas[view]
        cb, sb = np.cos(beta), np.sin(beta)

        u0 = rng.uniform_words(hist, np.zeros(m, dtype=np.uint64), 3)
        draws = np.ones(m, dtype=np.uint64)

        e0 = energies[np.searchsorted(cum_w, u0[:, 0], side="left").clip(0, len(energies) - 1)]
        gamma0 = (u0[:, 1] * 2.0 - 1.0) * gamma_half
        tau_target = -np.log(u0[:, 2])

        pos = np.stack([d_iso * cb, d_iso * sb], axis=1)
        # direction: central ray -(cb, sb) rotated by gamma0 (CCW)
        cg, sg = np.cos(gamma0), np.sin(gamma0)
        dirx = -cb * cg + sb * sg
        diry = -sb * cg - cb * sg
        dirs = np.stack([dirx, diry], axis=1)

        energy = e0.astype(np.float64)
        mu_w_cur = mu_w(energy)
        tau_acc = np.zeros(m)
        n_scat = np.zeros(m, dtype=np.int32)
        active = np.ones(m, dtype=bool)
        inside_started = np.zeros(m, dtype=bool)  # photon has entered the phantom circle

        # fast-forward through the vacuum between source and phantom circle;
        # rays missing the circle are immediate primaries
        b_half = pos[:, 0] * dirs[:, 0] + pos[:, 1] * dirs[:, 1]
        disc = b_half * b_half - (pos[:, 0] ** 2 + pos[:, 1] ** 2 - r_phantom**2)
        miss = disc <= 0
        if miss.any():
            mm_idx = np.nonzero(miss)[0]
            dbin = np.rint(gamma0[mm_idx] / pitch + (n_det - 1) / 2.0).astype(np.int64)
            ok = (dbin >= 0) & (dbin < n_det)
            np.add.at(f_tally, (view[mm_idx[ok]], dbin[ok]), e0[mm_idx[ok]])
            active[mm_idx] = False
        enter = ~miss
        t_enter = np.where(enter, -b_half - np.sqrt(np.maximum(disc, 0.0)), 0.0)
        adv = np.maximum(t_enter - ds, 0.0) * enter
        pos += dirs * adv[:, None]

        for _ in range(max_iter):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            p = pos[idx]
            ix = np.rint(p[:, 0] / sx + (nx - 1) / 2.0).astype(np.int64)
            iy = np.rint(p[:, 1] / sy + (ny - 1) / 2.0).astype(np.int64)
            in_grid = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
            rho = np.zeros(idx.size)
            if in_grid.any():
                rho[in_grid] = density[labels2d[iy[in_grid], ix[in_grid]]]
            tau_acc[idx] += rho * mu_w_cur[idx] * ds
            pos[idx] += dirs[idx] * ds

            r2 = pos[idx, 0] ** 2 + pos[idx, 1] ** 2
            entered = r2 <= r_phantom**2
            inside_started[idx[entered]] = True

            interact = tau_acc[idx] >= tau_target[idx]
            escaped = (r2 > r_exit**2) & inside_started[idx] & ~interact

            # --- escaped photons: tally
            esc = idx[escaped]
            if esc.size:
                prim_mask = n_scat[esc] == 0
                if prim_mask.any():
                    # primaries keep their launch direction: bin from launch angle
                    pp = esc[prim_mask]
                    dbin = np.rint(gamma0[pp] / pitch + (n_det - 1) / 2.0).astype(np.int64)
                    ok = (dbin >= 0) & (dbin < n_det)
                    np.add.at(f_tally, (view[pp[ok]], dbin[ok]), e0[pp[ok]])
                if (~prim_mask).any():
                    ss = esc[~prim_mask]
                    sxv = d_iso * cb[ss]
                    syv = d_iso * sb[ss]
                    wx = pos[ss, 0] - sxv
                    wy = pos[ss, 1] - syv
                    b_half = wx * dirs[ss, 0] + wy * dirs[ss, 1]
                    c_term = wx * wx + wy * wy - r_detector**2
                    t_hit = -b_half + np.sqrt(b_half * b_half - c_term)
                    qx = wx + t_hit * dirs[ss, 0]
                    qy = wy + t_hit * dirs[ss, 1]
                    gb = np.arctan2(-cb[ss] * qy + sb[ss] * qx, -cb[ss] * qx - sb[ss] * qy)
                    dbin = np.rint(gb / pitch + (n_det - 1) / 2.0).astype(np.int64)
                    ok = (np.abs(gb) <= gamma_half + 0.5 * pitch) & (dbin >= 0) & (dbin < n_det)
                    np.add.at(s_tally, (view[ss[ok]], dbin[ok]), energy[ss[ok]])
                active[esc] = False

            # --- interactions
            inter = idx[interact]
            if inter.size:
                capped = inter[n_scat[inter] >= max_scatters]
                active[capped] = False
                inter = inter[n_scat[inter] < max_scatters]
            if inter.size and photoelectric:
                u_pe = rng.uniform(hist[inter], draws[inter])
                draws[inter] += np.uint64(1)
                absorbed = u_pe < _photoelectric_prob(energy[inter])
                active[inter[absorbed]] = False
                inter = inter[~absorbed]
            if inter.size:
                cos_t, draws_new = _kahn_cos_theta(
                    rng, energy[inter], hist[inter], draws[inter]
                )
                draws[inter] = draws_new
                u_misc = rng.uniform_words(hist[inter], draws[inter], 2)
                draws[inter] += np.uint64(1)
                sign = np.where(u_misc[:, 0] < 0.5, 1.0, -1.0)
                theta = np.arccos(np.clip(cos_t, -1.0, 1.0)) * sign
                ct, st = np.cos(theta), np.sin(theta)
                dx, dy = dirs[inter, 0].copy(), dirs[inter, 1].copy()
                dirs[inter, 0] = ct * dx - st * dy
                dirs[inter, 1] = st * dx + ct * dy
                energy[inter] = compton_energy(energy[inter], theta)
                mu_w_cur[inter] = mu_w(energy[inter])
                n_scat[inter] += 1
                tau_acc[inter] = 0.0
                tau_target[inter] = -np.log(u_misc[:, 1])

        # any photon still active after max_iter is dropped (should not happen)

    return ScatterBank(
        geometry=geom,
        primary=f_tally,
        scatter=s_tally,
        n_histories=total,
        rng_seed=int(seed),
        phantom_id=phantom.phantom_id,
    )


def sample_trace(
    bank: ScatterBank,
    footprint: RoiFootprint,
    target_geom: FanBeamGeometry,
    seed: int = 0,
    roll: int | None = None,
) -> Sinogram:
    """Extract the detector band subtended by the footprint across views and
    resample it onto the target sinogram grid.

    Randomness is limited to the choice of a whole-view rotation offset of
    the precomputed bank (seeded); the band extraction itself is
    deterministic bilinear resampling with nonnegative weights.
    """
    g_bank = bank.geometry
    nv_b, nd_b = g_bank.n_views, g_bank.n_detectors
    if roll is None:
        roll = int(CounterRNG(derive_seed(seed, 11)).integers(0, 0, nv_b))
    cx, cy = footprint.center_mm

    nv_t, nd_t = target_geom.n_views, target_geom.n_detectors
    beta_t = target_geom.betas()
    vb = (beta_t / (2.0 * np.pi)) * nv_b + roll          # fractional bank view
    beta_b = 2.0 * np.pi * vb / nv_b

    d_iso = g_bank.source_to_iso_mm
    cbb, sbb = np.cos(beta_b), np.sin(beta_b)
    wx = cx - d_iso * cbb
    wy = cy - d_iso * sbb
    dist = np.hypot(wx, wy)
    if np.any(dist <= footprint.radius_mm):
        raise GeometryError("footprint disk touches the source trajectory")
    gamma_c = np.arctan2(-cbb * wy + sbb * wx, -cbb * wx - sbb * wy)
    delta = np.arcsin(footprint.radius_mm / dist)
    if np.any(np.abs(gamma_c) + delta > g_bank.fan_half_angle_rad + 1e-12):
        raise GeometryError("footprint band falls outside the bank detector arc")

    # map each target detector onto the band [gamma_c - delta, gamma_c + delta]
    gt = target_geom.gammas()
    ght = target_geom.fan_half_angle_rad
    rel = gt / ght if ght > 0 else np.zeros_like(gt)
    gamma_bank = gamma_c[:, None] + rel[None, :] * delta[:, None]
    fd = gamma_bank / g_bank.detector_angular_pitch_rad + (nd_b - 1) / 2.0

    v0 = np.floor(vb).astype(np.int64)
    fv = (vb - v0)[:, None]
    v0m = np.mod(v0, nv_b)
    v1m = np.mod(v0 + 1, nv_b)

    d0 = np.floor(fd).astype(np.int64)
    fdw = fd - d0
    d0c = np.clip(d0, 0, nd_b - 1)
    d1c = np.clip(d0 + 1, 0, nd_b - 1)

    s = bank.scatter
    row0 = s[v0m[:, None], d0c] * (1.0 - fdw) + s[v0m[:, None], d1c] * fdw
    row1 = s[v1m[:, None], d0c] * (1.0 - fdw) + s[v1m[:, None], d1c] * fdw
    out = row0 * (1.0 - fv) + row1 * fv
    return Sinogram(out, target_geom, 0)


def write_scatter_bank(bank: ScatterBank, path) -> None:
    g = bank.geometry
    header = _BANK_HEADER.pack(
        _BANK_MAGIC, g.n_views, g.n_detectors,
        np.float32(g.source_to_iso_mm), np.float32(g.detector_angular_pitch_rad),
        bank.n_histories, bank.rng_seed,
        bank.phantom_id.encode()[:16].ljust(16, b"\x00"),
    )
    payload = bank.primary.astype("<f4").tobytes() + bank.scatter.astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_scatter_bank(path) -> ScatterBank:
    blob = Path(path).read_bytes()
    if len(blob) < _BANK_HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the fixed header")
    magic, nv, nd, d_iso, pitch, n_hist, seed, pid = _BANK_HEADER.unpack_from(blob)
    if magic != _BANK_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if nv == 0 or nd == 0 or nv * nd > 2**28:
        raise BadHeaderError(f"{path}: bad bank dims ({nv}, {nd})")
    expected = _BANK_HEADER.size + 2 * 4 * nv * nd
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: payload truncated")
    if len(blob) > expected:
        raise BadHeaderError(f"{path}: trailing bytes")
    try:
        geom = FanBeamGeometry(float(d_iso), nv, nd, float(pitch))
    except ArgumentError as e:
        raise BadHeaderError(f"{path}: {e}") from e
    n = nv * nd
    f = np.frombuffer(blob, dtype="<f4", offset=_BANK_HEADER.size, count=n)
    s = np.frombuffer(blob, dtype="<f4", offset=_BANK_HEADER.size + 4 * n, count=n)
    return ScatterBank(
        geometry=geom,
        primary=f.reshape(nv, nd).astype(np.float64),
        scatter=s.reshape(nv, nd).astype(np.float64),
        n_histories=int(n_hist),
        rng_seed=int(seed),
        phantom_id=pid.rstrip(b"\x00").decode(errors="replace"),
    )
