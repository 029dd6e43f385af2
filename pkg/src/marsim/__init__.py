"""Fan-beam CT metal artifact simulation, MAR baselines and evaluation."""

__version__ = "0.1.0"

from .volume import (  # noqa: F401
    EnergySpectrum,
    Volume3D,
    VolumeKind,
    WaterMuTable,
    hu_to_attenuation,
    normalize_for_metrics,
    read_volume,
    write_volume,
)
from .projector import (  # noqa: F401
    FanBeamGeometry,
    Sinogram,
    fanbeam_project,
    fanbeam_reconstruct,
    project_volume,
    reconstruct_volume,
)
