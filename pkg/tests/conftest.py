import numpy as np
import pytest

from marsim.projector import FanBeamGeometry
from marsim.volume import Volume3D, VolumeKind


def grid_xy(nx, ny, sx=1.0, sy=1.0):
    x = (np.arange(nx) - (nx - 1) / 2.0) * sx
    y = (np.arange(ny) - (ny - 1) / 2.0) * sy
    return np.meshgrid(x, y)


def smooth_hu_phantom(nx=64, ny=64, nz=8, spacing=(1.0, 1.0, 1.0)):
    """Air background, smooth blobs supported well inside the covered FOV."""
    gx, gy = grid_xy(nx, ny, spacing[0], spacing[1])
    rr = np.sqrt(gx**2 + gy**2)
    blobs = 800.0 * np.exp(-(rr**2) / (2 * 10.0**2)) + 300.0 * np.exp(
        -((gx - 8) ** 2 + (gy + 6) ** 2) / (2 * 6.0**2)
    )
    r_lim = 0.40 * min(nx * spacing[0], ny * spacing[1])
    win = np.clip((r_lim - rr) / 4.0, 0.0, 1.0)
    data = np.stack(
        [-1000.0 + (1000.0 + blobs * (0.6 + 0.04 * z)) * win for z in range(nz)]
    )
    return Volume3D(data, spacing, VolumeKind.HU)


def disk_slice(nx=128, ny=128, sx=1.0, sy=1.0, radius=20.0, center=(0.0, 0.0)):
    gx, gy = grid_xy(nx, ny, sx, sy)
    rr = np.sqrt((gx - center[0]) ** 2 + (gy - center[1]) ** 2)
    return np.clip(0.5 - (rr - radius), 0.0, 1.0)


@pytest.fixture(scope="session")
def small_geom():
    return FanBeamGeometry.for_slice(32, 32, 1.0, 1.0, n_views=24, n_detectors=32)
