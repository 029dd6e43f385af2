"""Generator and discriminator networks.

Desk-scale 3D U-Net generator (channel widths doubling from a small base up
to a cap, skip connections, batch normalization) and an eight-block
convolutional discriminator with a scalar sigmoid head.
"""

from __future__ import annotations

import torch
from torch import nn


def _conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm3d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv3d(out_ch, out_ch, 3, padding=1),
        nn.BatchNorm3d(out_ch),
        nn.ReLU(inplace=True),
    )


class GeneratorNet(nn.Module):
    """Encoder-decoder with skip connections; output matches input shape
    for spatial dims divisible by 2**depth.  Sigmoid output in (0, 1)."""

    def __init__(self, base_channels: int = 16, depth: int = 3, channel_cap: int = 64):
        super().__init__()
        self.depth = depth
        widths = [min(base_channels * 2**i, channel_cap) for i in range(depth + 1)]
        self.enc = nn.ModuleList()
        ch = 1
        for w in widths[:-1]:
            self.enc.append(_conv_block(ch, w))
            ch = w
        self.pool = nn.MaxPool3d(2)
        self.bottom = _conv_block(ch, widths[-1])
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        ch = widths[-1]
        for w in reversed(widths[:-1]):
            self.up.append(nn.ConvTranspose3d(ch, w, 2, stride=2))
            self.dec.append(_conv_block(2 * w, w))
            ch = w
        self.head = nn.Conv3d(ch, 1, 1)

    @property
    def downsampling_factor(self) -> int:
        return 2**self.depth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.downsampling_factor
        for d in x.shape[2:]:
            if d % f:
                raise ValueError(f"spatial dims {tuple(x.shape[2:])} must divide {f}")
        if self.training and min(x.shape[2:]) < 2 * f:
            # batch norm needs more than one bottleneck voxel per channel
            raise ValueError(
                f"training requires spatial dims >= {2 * f}, got {tuple(x.shape[2:])}"
            )
        skips = []
        out = x
        for block in self.enc:
            out = block(out)
            skips.append(out)
            out = self.pool(out)
        out = self.bottom(out)
        for up, block, skip in zip(self.up, self.dec, reversed(skips)):
            out = up(out)
            out = block(torch.cat([out, skip], dim=1))
        return torch.sigmoid(self.head(out))


class DiscriminatorNet(nn.Module):
    """Eight conv+batchnorm blocks, global average pool, sigmoid scalar."""

    def __init__(self, base_channels: int = 8):
        super().__init__()
        widths = [base_channels * m for m in (1, 1, 2, 2, 4, 4, 8, 8)]
        strides = [1, 2, 1, 2, 1, 2, 1, 1]
        layers: list[nn.Module] = []
        ch = 1
        for w, s in zip(widths, strides):
            layers += [
                nn.Conv3d(ch, w, 3, stride=s, padding=1),
                nn.BatchNorm3d(w),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            ch = w
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.head = nn.Linear(ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.features(x)
        out = self.pool(out).flatten(1)
        return torch.sigmoid(self.head(out)).squeeze(1)
