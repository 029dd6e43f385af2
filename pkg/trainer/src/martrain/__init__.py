"""Toy-scale 3D GAN trainer for metal artifact reduction datasets."""

__version__ = "0.1.0"

from .models import DiscriminatorNet, GeneratorNet  # noqa: F401
from .train import TrainConfig, train  # noqa: F401
