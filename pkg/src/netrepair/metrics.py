"""Repair metrics: repair/break/success rates, confusion matrices, the
most frequent misclassification types, and per-label patched/broken
distributions between two model versions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Dataset, NetworkModel, accuracy, predict


@dataclass
class RepairOutcome:
    repair_rate: float
    break_rate: float
    success: bool
    acc_train_before: float = 0.0
    acc_train_after: float = 0.0
    acc_test_before: float = 0.0
    acc_test_after: float = 0.0

    def __post_init__(self):
        expected = self.repair_rate > 0 and self.break_rate == 0
        if self.success != expected:
            raise ValueError("success flag inconsistent with rates")


@dataclass(frozen=True)
class FaultType:
    true_label: int
    predicted_label: int
    instance_count: int


def rates(model_before: NetworkModel, model_after: NetworkModel,
          i_neg: Dataset, i_pos: Dataset,
          train_set: Dataset | None = None,
          test_set: Dataset | None = None) -> RepairOutcome:
    """Count-based repair rate over I_neg and break rate over I_pos.

    Success means at least one negative fixed and exactly zero positives
    broken (integer comparison, no float threshold).
    """
    if len(i_neg) == 0 or len(i_pos) == 0:
        raise ValueError("I_neg and I_pos must be nonempty")
    patched = int((predict(model_after, i_neg) == i_neg.labels).sum())
    broken = int((predict(model_after, i_pos) != i_pos.labels).sum())
    rr = patched / len(i_neg)
    br = broken / len(i_pos)
    return RepairOutcome(
        rr, br, rr > 0 and broken == 0,
        acc_train_before=(accuracy(model_before, train_set)
                          if train_set is not None else 0.0),
        acc_train_after=(accuracy(model_after, train_set)
                         if train_set is not None else 0.0),
        acc_test_before=(accuracy(model_before, test_set)
                         if test_set is not None else 0.0),
        acc_test_after=(accuracy(model_after, test_set)
                        if test_set is not None else 0.0))


def confusion(model: NetworkModel, dataset: Dataset) -> np.ndarray:
    """cm[t, p] counts inputs with ground truth t predicted as p."""
    c = model.class_count
    preds = predict(model, dataset)
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (dataset.labels, preds), 1)
    return cm


def top_fault_types(cm: np.ndarray, k: int) -> list[FaultType]:
    """The k off-diagonal cells with the most instances, ties broken by
    (true, predicted) ascending; returns fewer when not enough nonzero."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cells = [(int(cm[t, p]), t, p)
             for t in range(cm.shape[0]) for p in range(cm.shape[1])
             if t != p and cm[t, p] > 0]
    cells.sort(key=lambda c: (-c[0], c[1], c[2]))
    return [FaultType(t, p, n) for n, t, p in cells[:k]]


def label_diff(model_before: NetworkModel, model_after: NetworkModel,
               dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-ground-truth-label (patched, broken) counts between versions."""
    c = model_before.class_count
    before_ok = predict(model_before, dataset) == dataset.labels
    after_ok = predict(model_after, dataset) == dataset.labels
    patched = np.zeros(c, dtype=np.int64)
    broken = np.zeros(c, dtype=np.int64)
    np.add.at(patched, dataset.labels[~before_ok & after_ok], 1)
    np.add.at(broken, dataset.labels[before_ok & ~after_ok], 1)
    return patched, broken


@dataclass
class Summary:
    runs: int
    mean_repair_rate: float
    mean_break_rate: float
    success_rate: float
    mean_acc_train_after: float
    mean_acc_test_after: float


def aggregate(outcomes: list[RepairOutcome]) -> Summary:
    if not outcomes:
        raise ValueError("need at least one outcome")
    n = len(outcomes)
    return Summary(
        runs=n,
        mean_repair_rate=float(np.mean([o.repair_rate for o in outcomes])),
        mean_break_rate=float(np.mean([o.break_rate for o in outcomes])),
        success_rate=sum(o.success for o in outcomes) / n,
        mean_acc_train_after=float(
            np.mean([o.acc_train_after for o in outcomes])),
        mean_acc_test_after=float(
            np.mean([o.acc_test_after for o in outcomes])))
