"""Bridge from torch checkpoints into the repair toolkit's file formats."""

from .core import (ExportManifest, ShapeMismatchError, UnsupportedHeadError,
                   export_activations, export_head, load_checkpoint,
                   penultimate_activations)

__all__ = [
    "ExportManifest", "ShapeMismatchError", "UnsupportedHeadError",
    "export_activations", "export_head", "load_checkpoint",
    "penultimate_activations",
]

__version__ = "0.1.0"
