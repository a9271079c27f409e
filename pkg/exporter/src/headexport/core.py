"""Head and activation export from torch checkpoints.

Only the final dense layer is converted; for arbitrary backbones the
penultimate activations are dumped as a dataset-format cache, so the
repair toolkit can patch the head of any architecture without ever
seeing the backbone weights.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .formats import write_dataset, write_head_model


class UnsupportedHeadError(TypeError):
    """Checkpoint's final layer is not a dense (Linear) head."""


class ShapeMismatchError(ValueError):
    pass


def load_checkpoint(path) -> nn.Module:
    """Load a serialized nn.Module (a trusted local conversion input)."""
    model = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(model, nn.Module):
        raise UnsupportedHeadError(
            f"checkpoint holds {type(model).__name__}, expected a module")
    model.eval()
    return model


def _head_linear(model: nn.Module) -> nn.Linear:
    """The final Linear layer; a trailing Softmax module is tolerated
    since the toolkit's model format applies softmax itself."""
    children = list(model.children()) or [model]
    while children and isinstance(children[-1], nn.Softmax):
        children = children[:-1]
    if not children or not isinstance(children[-1], nn.Linear):
        tail = type(children[-1]).__name__ if children else "nothing"
        raise UnsupportedHeadError(
            f"final layer is {tail}, only a dense (Linear) softmax head "
            "can be exported")
    return children[-1]


def export_head(model: nn.Module) -> bytes:
    """The final dense layer as a one-layer softmax .anet model.

    torch stores Linear weights as (out_features, in_features); the
    toolkit's kernels are (in, out), hence the transpose.
    """
    head = _head_linear(model)
    kernel = head.weight.detach().numpy().T
    if head.bias is not None:
        bias = head.bias.detach().numpy()
    else:
        bias = np.zeros(kernel.shape[1], dtype=np.float32)
    return write_head_model(kernel, bias)


def penultimate_activations(model: nn.Module,
                            features: np.ndarray) -> np.ndarray:
    """Inputs of the final Linear layer, one row per dataset row."""
    head = _head_linear(model)
    features = np.ascontiguousarray(features, dtype=np.float32)
    if len(features) == 0:
        return np.zeros((0, head.in_features), dtype=np.float32)

    captured = []
    hook = head.register_forward_pre_hook(
        lambda module, args: captured.append(args[0].detach()))
    try:
        with torch.no_grad():
            model(torch.from_numpy(features))
    except RuntimeError as exc:
        raise ShapeMismatchError(
            f"dataset rows of width {features.shape[1]} do not fit the "
            f"checkpoint: {exc}") from exc
    finally:
        hook.remove()
    cache = captured[0].reshape(len(features), -1).numpy()
    if cache.shape[1] != head.in_features:
        raise ShapeMismatchError(
            f"captured width {cache.shape[1]} != head input "
            f"{head.in_features}")
    return np.ascontiguousarray(cache, dtype=np.float32)


def export_activations(model: nn.Module, features: np.ndarray,
                       labels: np.ndarray) -> bytes:
    """Penultimate activation cache in dataset format, labels preserved
    row for row."""
    head = _head_linear(model)
    cache = penultimate_activations(model, features)
    return write_dataset(cache, labels, head.out_features)


@dataclass
class ExportManifest:
    source: str
    class_count: int
    penultimate_width: int
    activation_cache: bool
    files: dict  # name -> sha256 hex digest

    def to_json(self) -> str:
        return json.dumps(
            {"source": self.source, "class_count": self.class_count,
             "penultimate_width": self.penultimate_width,
             "activation_cache": self.activation_cache,
             "layer_mapping": {"head": "layer 0 (softmax)"},
             "files": self.files},
            indent=2, sort_keys=True) + "\n"


def build_manifest(source: str, model: nn.Module, activation_cache: bool,
                   blobs: dict) -> ExportManifest:
    head = _head_linear(model)
    return ExportManifest(
        source=source, class_count=head.out_features,
        penultimate_width=head.in_features,
        activation_cache=activation_cache,
        files={name: hashlib.sha256(data).hexdigest()
               for name, data in sorted(blobs.items())})
