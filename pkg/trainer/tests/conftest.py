import subprocess
import sys

import pytest

TRAIN_CFG = """
dataset.n_volumes = 10
dataset.out_dir = ds
dataset.seed = 31
grid.nx = 16
grid.ny = 16
grid.nz = 16
grid.spacing_x_mm = 0.5
grid.spacing_y_mm = 0.5
grid.spacing_z_mm = 0.5
spiral.basal_radius_mm = 1.6
spiral.taper_rate = 0.12
spiral.turns = 2.0
spiral.height_mm = 1.0
spiral.duct_radius_mm = 0.35
electrodes.count = 6
electrodes.pitch_mm = 0.8
electrodes.offset_mm = 0.8
sim.n_views = 48
sim.noise_sigma2 = 0.04
sim.alpha_r = random
sim.scatter_enabled = false
"""


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    """16^3 paired dataset generated through the primary package's CLI
    (its external interface)."""
    root = tmp_path_factory.mktemp("toyds")
    cfg = root / "gen.cfg"
    cfg.write_text(TRAIN_CFG)
    proc = subprocess.run(
        [sys.executable, "-m", "marsim.cli", "generate", "--config", str(cfg)],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    manifest = root / "ds" / "manifest.tsv"
    assert manifest.is_file()
    return manifest
