"""Training loss terms, numerically matching the dataset package's
deterministic operators (cross-checked by the parity tests).

All functions are dtype-generic: float64 tensors give reference-grade
values, float32 is used during training.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

EPS_POS = 1e-6


def positive_shift(x: torch.Tensor) -> torch.Tensor:
    """Map [0, 1] data to (0, 1] so logarithms stay finite."""
    return x.clamp(0.0, 1.0) * (1.0 - EPS_POS) + EPS_POS


def _gaussian_kernel(sigma: float, dtype, device) -> torch.Tensor:
    radius = int(math.ceil(3.0 * sigma))
    x = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur_3d(x: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian over the last three dims, clamp-to-edge padding.

    Accepts (D, H, W) or (N, C, D, H, W)."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x[None, None]
    k = _gaussian_kernel(sigma, x.dtype, x.device)
    r = (k.numel() - 1) // 2
    out = x
    for dim in range(3):
        shape = [1, 1, 1, 1, 1]
        shape[2 + dim] = k.numel()
        pad = [0, 0, 0, 0, 0, 0]
        pad[2 * (2 - dim)] = r
        pad[2 * (2 - dim) + 1] = r
        out = F.pad(out, pad, mode="replicate")
        out = F.conv3d(out, k.reshape(shape))
    return out[0, 0] if squeeze else out


def retinex_reflectance(x: torch.Tensor, sigma: float) -> torch.Tensor:
    """Single-scale reflectance exp(log x - log blur(x)); x must be > 0."""
    return torch.exp(torch.log(x) - torch.log(gaussian_blur_3d(x, sigma)))


def retinex_loss(g_shifted: torch.Tensor, y_shifted: torch.Tensor, sigma: float) -> torch.Tensor:
    """Mean |G - R(G)| / max(|Y|, eps) over voxels; inputs already in (0, 1]."""
    r = retinex_reflectance(g_shifted, sigma)
    denom = torch.clamp(y_shifted.abs(), min=EPS_POS)
    return ((g_shifted - r).abs() / denom).mean()


def mse_loss(target: torch.Tensor, g_out: torch.Tensor) -> torch.Tensor:
    return ((target - g_out) ** 2).mean()


def adversarial_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """0.5 * mean((D(G) - 1)^2)."""
    return 0.5 * ((d_fake - 1.0) ** 2).mean()


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """mean log D(real) + mean log(1 - D(fake)); to be maximized."""
    eps = 1e-7
    return (
        torch.log(d_real.clamp(eps, 1.0 - eps)).mean()
        + torch.log(1.0 - d_fake.clamp(eps, 1.0 - eps)).mean()
    )


def generator_loss(
    g_out: torch.Tensor,
    target: torch.Tensor,
    y_input: torch.Tensor,
    d_fake: torch.Tensor,
    alpha: float,
    sigma: float,
) -> tuple[torch.Tensor, dict]:
    """alpha * L_retinex + L_mse + L_adv; the Retinex term is always
    evaluated for logging but enters the objective only when alpha > 0."""
    l_mse = mse_loss(target, g_out)
    l_adv = adversarial_loss(d_fake)
    l_ret = retinex_loss(positive_shift(g_out), positive_shift(y_input), sigma)
    total = l_mse + l_adv
    if alpha > 0:
        total = total + alpha * l_ret
    parts = {
        "l_mse": float(l_mse.detach()),
        "l_retinex": float(l_ret.detach()),
        "l_adv": float(l_adv.detach()),
        "l_gen": float(total.detach()),
    }
    return total, parts
