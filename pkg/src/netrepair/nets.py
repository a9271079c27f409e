"""Dense-network core: forward pass, softmax/cross-entropy, penultimate
activation capture, and the analytic gradient of the loss with respect to
the final-layer kernel.

Weights are stored as float32; loss accumulation happens in float64.
All functions are pure and safe to call concurrently on a shared model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "softmax", "identity")

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when an input or layer dimension does not line up."""


@dataclass(frozen=True)
class DenseLayer:
    kernel: np.ndarray  # (in_dim, out_dim), float32
    bias: np.ndarray    # (out_dim,), float32
    activation: str

    def __post_init__(self):
        k = np.ascontiguousarray(np.asarray(self.kernel, dtype=np.float32))
        b = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float32))
        if k.ndim != 2:
            raise ShapeError(f"kernel must be 2-D, got shape {k.shape}")
        if b.shape != (k.shape[1],):
            raise ShapeError(
                f"bias shape {b.shape} inconsistent with kernel {k.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.kernel.shape[0]

    @property
    def out_dim(self) -> int:
        return self.kernel.shape[1]


@dataclass(frozen=True)
class NetworkModel:
    layers: tuple
    class_count: int

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("model needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise ShapeError(
                    f"layer {k} out_dim {layers[k].out_dim} != "
                    f"layer {k + 1} in_dim {layers[k + 1].in_dim}")
        last = layers[-1]
        if last.out_dim != self.class_count:
            raise ShapeError(
                f"final layer out_dim {last.out_dim} != class_count "
                f"{self.class_count}")
        if last.activation != "softmax":
            raise ShapeError("final layer activation must be softmax")
        object.__setattr__(self, "layers", layers)

    @property
    def head(self) -> DenseLayer:
        return self.layers[-1]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def penultimate_width(self) -> int:
        return self.head.in_dim

    def replace_head_kernel(self, kernel: np.ndarray) -> "NetworkModel":
        head = DenseLayer(kernel, self.head.bias, self.head.activation)
        return NetworkModel(self.layers[:-1] + (head,), self.class_count)


@dataclass
class Dataset:
    """Row-major feature matrix with one integer label per row."""

    features: np.ndarray  # (n, dim), float32
    labels: np.ndarray    # (n,), int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (len(self.features),):
            raise ShapeError(
                f"features {self.features.shape} / labels {self.labels.shape} "
                "mismatch")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max-logit subtraction)."""
    z = np.asarray(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softmax":
        return softmax(z)
    return z


def forward(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one input (1-D) or a batch (2-D)."""
    a = np.asarray(x, dtype=np.float32)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    for k, layer in enumerate(model.layers):
        if a.shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {k} expects {layer.in_dim} inputs, got {a.shape[1]}")
        a = _activate(layer.activation, a @ layer.kernel + layer.bias)
    return a[0] if squeeze else a


def penultimate(model: NetworkModel, inputs: np.ndarray) -> np.ndarray:
    """Activations entering the final layer, one row per input.

    An empty batch yields an empty (0, width) cache.
    """
    a = np.asarray(inputs, dtype=np.float32)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[0] == 0:
        return np.zeros((0, model.penultimate_width), dtype=np.float32)
    for k, layer in enumerate(model.layers[:-1]):
        if a.shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {k} expects {layer.in_dim} inputs, got {a.shape[1]}")
        a = _activate(layer.activation, a @ layer.kernel + layer.bias)
    if a.shape[1] != model.head.in_dim:
        raise ShapeError(
            f"final layer expects {model.head.in_dim} inputs, got {a.shape[1]}")
    return a


def head_forward(head: DenseLayer, cache: np.ndarray) -> np.ndarray:
    """Final-layer probabilities from cached penultimate activations."""
    cache = np.asarray(cache, dtype=np.float32)
    squeeze = cache.ndim == 1
    if squeeze:
        cache = cache[None, :]
    out = _activate(head.activation, cache @ head.kernel + head.bias)
    return out[0] if squeeze else out


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log p[label], with p floored at 1e-12 so the result stays finite."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    p = max(float(probs[label]), PROB_FLOOR)
    return float(-np.log(np.float64(p)))


def mean_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a batch, accumulated in float64."""
    if len(labels) == 0:
        return 0.0
    p = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(-np.log(np.maximum(p, PROB_FLOOR)).mean())


def last_layer_gradient(model: NetworkModel, features: np.ndarray,
                        label: int) -> np.ndarray:
    """d(loss)/d(kernel) for the final layer under softmax + cross-entropy.

    Entry (i, j) equals o_i * (p_j - [j == label]) where o is the
    penultimate activation and p the predicted probabilities.
    """
    o = penultimate(model, np.asarray(features)[None, :])[0].astype(np.float64)
    # head evaluated in float64 so the gradient is accurate well past
    # float32 resolution (finite-difference checks rely on this)
    z = o @ model.head.kernel.astype(np.float64) \
        + model.head.bias.astype(np.float64)
    p = softmax(z)
    delta = p.copy()
    delta[label] -= 1.0
    return np.outer(o, delta)


def predict(model: NetworkModel, dataset: Dataset) -> np.ndarray:
    return forward(model, dataset.features).argmax(axis=1)


def accuracy(model: NetworkModel, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    return float((predict(model, dataset) == dataset.labels).mean())
