"""Desk-scale training: synthetic cluster data, minibatch SGD with momentum,
the two stopping regimes (under-train cap, full-train patience), and the
retraining baseline that fits only a small repair set.

Everything is deterministic under the configured seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .nets import (Dataset, DenseLayer, NetworkModel, accuracy,
                   mean_cross_entropy, softmax)

MODE_UNDER = "underTrain"
MODE_FULL = "fullTrain"
MODE_RETRAIN = "retrain"


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 50
    mode: str = MODE_UNDER
    accuracy_cap: float = 0.90       # underTrain only
    patience_decreases: int = 5      # fullTrain; retrain uses drop rule too
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.accuracy_cap <= 1:
            raise ValueError("accuracy_cap must lie in (0, 1]")
        if self.patience_decreases < 1:
            raise ValueError("patience_decreases must be >= 1")


@dataclass
class SyntheticSpec:
    class_count: int = 10
    feature_dim: int = 32
    per_class_count: int = 500
    cluster_spread: float = 1.0
    overlap_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.overlap_factor < 0:
            raise ValueError("overlap_factor must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    train_acc: float
    val_acc: float
    loss: float


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Class-conditional Gaussian clusters with controlled overlap.

    Cluster centres are pushed together as overlap_factor grows, so a
    trained classifier shows a non-uniform confusion matrix instead of
    either perfect separation or pure noise. Test split holds one fifth
    of per_class_count rows per class.
    """
    rng = np.random.default_rng(spec.seed)
    scale = 1.5 / (1.0 + spec.overlap_factor)
    centres = rng.normal(0.0, scale,
                         (spec.class_count, spec.feature_dim))

    def draw(per_class: int) -> Dataset:
        feats, labels = [], []
        for c in range(spec.class_count):
            pts = rng.normal(centres[c], spec.cluster_spread,
                             (per_class, spec.feature_dim))
            feats.append(pts)
            labels.append(np.full(per_class, c))
        x = np.concatenate(feats).astype(np.float32)
        y = np.concatenate(labels)
        order = rng.permutation(len(y))
        return Dataset(x[order], y[order])

    train = draw(spec.per_class_count)
    test = draw(max(1, spec.per_class_count // 5))
    return train, test


def init_model(layer_dims: list[int], class_count: int,
               seed: int) -> NetworkModel:
    """Glorot-uniform MLP: relu hidden layers, softmax output."""
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[k], layer_dims[k + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        kernel = rng.uniform(-limit, limit, (fan_in, fan_out))
        act = "softmax" if k == len(layer_dims) - 2 else "relu"
        layers.append(DenseLayer(kernel.astype(np.float32),
                                 np.zeros(fan_out, dtype=np.float32), act))
    return NetworkModel(tuple(layers), class_count)


def _backprop_batch(layers, x, y):
    """Gradients for one minibatch; returns (grads, batch loss)."""
    acts = [x]
    pre = []
    a = x
    for layer in layers:
        z = a @ layer.kernel + layer.bias
        pre.append(z)
        if layer.activation == "relu":
            a = np.maximum(z, 0.0)
        elif layer.activation == "softmax":
            a = softmax(z)
        else:
            a = z
        acts.append(a)
    probs = acts[-1]
    loss = mean_cross_entropy(probs, y)

    n = len(y)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        gk = acts[k].T @ delta
        gb = delta.sum(axis=0)
        grads.append((gk, gb))
        if k > 0:
            delta = delta @ layers[k].kernel.T
            if layers[k - 1].activation == "relu":
                delta = delta * (pre[k - 1] > 0)
    grads.reverse()
    return grads, loss


def _sgd_epoch(layers, dataset, config, rng, velocities):
    """One shuffled pass; mutates the kernel/bias arrays in place."""
    order = rng.permutation(len(dataset))
    total_loss = 0.0
    batches = 0
    for start in range(0, len(dataset), config.batch_size):
        idx = order[start:start + config.batch_size]
        grads, loss = _backprop_batch(layers, dataset.features[idx],
                                      dataset.labels[idx])
        total_loss += loss
        batches += 1
        for k, (gk, gb) in enumerate(grads):
            vk, vb = velocities[k]
            vk *= config.momentum
            vk -= config.learning_rate * gk
            vb *= config.momentum
            vb -= config.learning_rate * gb
            layers[k].kernel += vk.astype(np.float32)
            layers[k].bias += vb.astype(np.float32)
    return total_loss / max(batches, 1)


class _Mutable:
    """Writable layer view used only inside the training loop."""

    def __init__(self, layer: DenseLayer):
        self.kernel = layer.kernel.copy()
        self.bias = layer.bias.copy()
        self.activation = layer.activation

    def freeze(self) -> DenseLayer:
        return DenseLayer(self.kernel.copy(), self.bias.copy(),
                          self.activation)


def _freeze(layers, class_count) -> NetworkModel:
    return NetworkModel(tuple(l.freeze() for l in layers), class_count)


def should_stop_full(val_accs: list[float], patience: int) -> bool:
    """True once validation accuracy decreased `patience` epochs in a row."""
    if len(val_accs) < patience + 1:
        return False
    tail = val_accs[-(patience + 1):]
    return all(tail[k + 1] < tail[k] for k in range(patience))


def train(model: NetworkModel, train_set: Dataset,
          config: TrainConfig) -> tuple[NetworkModel, list[EpochStats]]:
    """Train under one of the two fault-manufacturing regimes.

    underTrain: stop before train accuracy crosses accuracy_cap; the
    epoch that crosses is rolled back, so the cap always holds.
    fullTrain: reserve 20% of the data for validation and stop after
    patience_decreases consecutive validation-accuracy drops.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)

    if config.mode == MODE_FULL:
        split = rng.permutation(len(train_set))
        n_val = max(1, len(train_set) // 5)
        val_set = train_set.subset(split[:n_val])
        fit_set = train_set.subset(split[n_val:])
    else:
        val_set = None
        fit_set = train_set

    layers = [_Mutable(l) for l in model.layers]
    velocities = [(np.zeros_like(l.kernel, dtype=np.float64),
                   np.zeros_like(l.bias, dtype=np.float64)) for l in layers]
    log: list[EpochStats] = []
    val_accs: list[float] = []

    for epoch in range(1, config.max_epochs + 1):
        snapshot = [(l.kernel.copy(), l.bias.copy()) for l in layers]
        loss = _sgd_epoch(layers, fit_set, config, rng, velocities)
        current = _freeze(layers, model.class_count)
        train_acc = accuracy(current, train_set)

        if config.mode == MODE_UNDER and train_acc > config.accuracy_cap:
            for l, (k, b) in zip(layers, snapshot):
                l.kernel, l.bias = k, b
            break

        val_acc = accuracy(current, val_set) if val_set is not None else 0.0
        log.append(EpochStats(epoch, train_acc, val_acc, loss))
        if config.mode == MODE_FULL:
            val_accs.append(val_acc)
            if should_stop_full(val_accs, config.patience_decreases):
                break

    return _freeze(layers, model.class_count), log


def retrain_baseline(model: NetworkModel, i_neg: Dataset, i_pos: Dataset,
                     test_set: Dataset,
                     config: TrainConfig) -> tuple[NetworkModel,
                                                   list[EpochStats]]:
    """RQ4 baseline: gradient steps on I_neg + I_pos only, all layers,
    stopped once test accuracy drops in consecutive epochs."""
    if len(i_neg) + len(i_pos) == 0:
        raise ValueError("retraining needs a nonempty repair set")
    fit_set = Dataset(
        np.concatenate([i_neg.features, i_pos.features]),
        np.concatenate([i_neg.labels, i_pos.labels]))
    rng = np.random.default_rng(config.seed)
    layers = [_Mutable(l) for l in model.layers]
    velocities = [(np.zeros_like(l.kernel, dtype=np.float64),
                   np.zeros_like(l.bias, dtype=np.float64)) for l in layers]
    log: list[EpochStats] = []
    test_accs: list[float] = []
    drop_patience = 2

    for epoch in range(1, config.max_epochs + 1):
        loss = _sgd_epoch(layers, fit_set, config, rng, velocities)
        current = _freeze(layers, model.class_count)
        test_acc = accuracy(current, test_set)
        log.append(EpochStats(epoch, accuracy(current, fit_set),
                              test_acc, loss))
        test_accs.append(test_acc)
        if should_stop_full(test_accs, drop_patience):
            break

    return _freeze(layers, model.class_count), log
