"""Image-quality metrics, 3-D Gaussian blur, single-scale Retinex
decomposition and the GAN training loss terms as deterministic operators.

All operators accept plain ndarrays; ``metrics`` also accepts normalized
``Volume3D`` values.  PSNR on identical inputs is reported as a flag plus a
capped 99 dB so serialized tables stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ArgumentError, DomainError
from .volume import Volume3D, VolumeKind

EPS_POS = 1e-6
PSNR_CAP_DB = 99.0

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DYNAMIC_RANGE = 1.0


@dataclass(frozen=True)
class SliceMetrics:
    slice_index: int
    psnr_db: float
    rmse: float
    ssim: float


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    rmse: float
    ssim: float
    identical: bool = False
    per_slice: tuple[SliceMetrics, ...] | None = None


@dataclass(frozen=True)
class GanLosses:
    l_disc: float
    l_mse: float
    l_retinex: float
    l_adv: float
    l_gen: float


def _as_array(vol) -> np.ndarray:
    if isinstance(vol, Volume3D):
        return vol.data.astype(np.float64)
    return np.asarray(vol, dtype=np.float64)


def _gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    if sigma <= 0:
        raise ArgumentError("sigma must be positive")
    r = int(np.ceil(3.0 * sigma)) if radius is None else int(radius)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur_3d(vol, sigma_voxels: float):
    """Separable 3-axis Gaussian, kernel radius ceil(3*sigma), normalized to
    sum 1, clamp-to-edge boundary handling.  Returns the input's type."""
    arr = _as_array(vol)
    if arr.ndim != 3:
        raise ArgumentError(f"expected a 3-D array, got shape {arr.shape}")
    k = _gaussian_kernel(sigma_voxels)
    out = arr
    for axis in range(3):
        out = correlate1d(out, k, axis=axis, mode="nearest")
    if isinstance(vol, Volume3D):
        if vol.kind == VolumeKind.MASK:
            raise ArgumentError("blurring a mask volume breaks its invariant")
        return Volume3D(out, vol.spacing, vol.kind)
    return out


def retinex_reflectance(vol, sigma_voxels: float) -> np.ndarray:
    """Single-scale reflectance: exp(log I - log blur(I)).

    Scale invariant: multiplying the input by a positive constant leaves the
    result unchanged up to floating point."""
    arr = _as_array(vol)
    if arr.ndim != 3:
        raise ArgumentError(f"expected a 3-D array, got shape {arr.shape}")
    if np.any(arr < EPS_POS):
        raise DomainError(f"retinex input must be >= {EPS_POS:g} everywhere")
    log_i = np.log(arr)
    k = _gaussian_kernel(sigma_voxels)
    blur = arr
    for axis in range(3):
        blur = correlate1d(blur, k, axis=axis, mode="nearest")
    return np.exp(log_i - np.log(blur))


def retinex_loss(g_out, y, sigma_voxels: float) -> float:
    """Mean voxelwise |G - R(G)| / max(|Y|, eps): zero when the blurred
    illumination estimate equals the image itself."""
    g = _as_array(g_out)
    yv = _as_array(y)
    if g.shape != yv.shape:
        raise ArgumentError(f"shape mismatch: {g.shape} vs {yv.shape}")
    r = retinex_reflectance(g, sigma_voxels)
    denom = np.maximum(np.abs(yv), EPS_POS)
    return float(np.mean(np.abs(g - r) / denom))


def positive_shift(vol) -> np.ndarray:
    """Map a normalized [0, 1] array to (0, 1] for Retinex operators."""
    arr = _as_array(vol)
    return np.clip(arr, 0.0, 1.0) * (1.0 - EPS_POS) + EPS_POS


def _ssim_mean(a: np.ndarray, b: np.ndarray) -> float:
    k = _gaussian_kernel(SSIM_SIGMA, SSIM_RADIUS)

    def smooth(x):
        out = x
        for axis in range(x.ndim):
            out = correlate1d(out, k, axis=axis, mode="nearest")
        return out

    c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE) ** 2
    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _psnr_from_rmse(rmse: float) -> tuple[float, bool]:
    if rmse == 0.0:
        return PSNR_CAP_DB, True
    return min(float(20.0 * np.log10(1.0 / rmse)), PSNR_CAP_DB), False


def metrics(a, b, per_slice: bool = False) -> MetricReport:
    """RMSE / PSNR / SSIM between two normalized volumes."""
    for v in (a, b):
        if isinstance(v, Volume3D) and v.kind != VolumeKind.NORMALIZED:
            raise ArgumentError(f"metrics expects Normalized volumes, got {v.kind.name}")
    av = _as_array(a)
    bv = _as_array(b)
    if av.shape != bv.shape:
        raise ArgumentError(f"shape mismatch: {av.shape} vs {bv.shape}")
    rmse = float(np.sqrt(np.mean((av - bv) ** 2)))
    psnr, identical = _psnr_from_rmse(rmse)
    ssim = _ssim_mean(av, bv)
    slices = None
    if per_slice:
        rows = []
        for z in range(av.shape[0]):
            r = float(np.sqrt(np.mean((av[z] - bv[z]) ** 2)))
            p, _ = _psnr_from_rmse(r)
            rows.append(SliceMetrics(z, p, r, _ssim_mean(av[z], bv[z])))
        slices = tuple(rows)
    return MetricReport(psnr, rmse, ssim, identical, slices)


def gan_losses(
    d_real: np.ndarray,
    d_fake: np.ndarray,
    g_out,
    target,
    y,
    alpha: float,
    sigma_voxels: float = 3.0,
) -> GanLosses:
    """Discriminator and generator loss terms.

    ``d_real`` / ``d_fake`` are post-sigmoid discriminator outputs in (0,1);
    ``g_out`` must already be shifted to (0, 1] (see :func:`positive_shift`).
    The generator objective is ``alpha * L_retinex + L_mse + L_adv``.
    """
    dr = np.asarray(d_real, dtype=np.float64).ravel()
    df = np.asarray(d_fake, dtype=np.float64).ravel()
    if dr.size == 0 or df.size == 0:
        raise ArgumentError("discriminator batches must be nonempty")
    if np.any((dr <= 0) | (dr >= 1)) or np.any((df <= 0) | (df >= 1)):
        raise DomainError("discriminator outputs must lie strictly in (0, 1)")
    if alpha < 0:
        raise ArgumentError("alpha must be nonnegative")
    g = _as_array(g_out)
    t = _as_array(target)
    if g.shape != t.shape:
        raise ArgumentError(f"shape mismatch: {g.shape} vs {t.shape}")
    l_disc = float(np.mean(np.log(dr)) + np.mean(np.log(1.0 - df)))
    l_mse = float(np.mean((t - g) ** 2))
    l_ret = retinex_loss(g, y, sigma_voxels)
    l_adv = float(0.5 * np.mean((df - 1.0) ** 2))
    l_gen = alpha * l_ret + l_mse + l_adv
    return GanLosses(l_disc, l_mse, l_ret, l_adv, l_gen)


def metric_report_lines(report: MetricReport, prefix: str = "") -> list[str]:
    """key=value text form of a report."""
    p = f"{prefix}." if prefix else ""
    lines = [
        f"{p}psnr_db={report.psnr_db:.6g}",
        f"{p}rmse={report.rmse:.6g}",
        f"{p}ssim={report.ssim:.6g}",
        f"{p}identical={'true' if report.identical else 'false'}",
    ]
    return lines
