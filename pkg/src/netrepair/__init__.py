"""Search-based repair of feed-forward classifiers: final-layer weight
localisation plus constriction-coefficient particle swarm patching."""

from .nets import Dataset, DenseLayer, NetworkModel, ShapeError
from .fileio import Patch
from .pso import SwarmConfig, apply_patch, repair

__all__ = [
    "Dataset", "DenseLayer", "NetworkModel", "ShapeError",
    "Patch", "SwarmConfig", "apply_patch", "repair",
]

__version__ = "0.1.0"
