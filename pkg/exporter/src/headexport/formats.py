"""Writers for the repair toolkit's file formats.

These are produced from the published format specification (see the
toolkit README), not by importing the toolkit: the byte layout is the
interface between the two packages.

.anet: ASCII manifest ("ANET 1", class count, layer lines, "end")
followed by little-endian float32 payload, kernel then bias per layer.
.adat: magic b"ADAT1\\n", a <III header (rows, feature width, class
count), then rows of float32 features plus a uint16 label.
"""

from __future__ import annotations

import struct

import numpy as np

DATASET_MAGIC = b"ADAT1\n"
DATASET_HEADER = struct.Struct("<III")


def write_head_model(kernel: np.ndarray, bias: np.ndarray) -> bytes:
    """One-layer softmax model: kernel (in_dim, classes), bias (classes,)."""
    kernel = np.ascontiguousarray(kernel, dtype=np.float32)
    bias = np.ascontiguousarray(bias, dtype=np.float32)
    if kernel.ndim != 2 or bias.shape != (kernel.shape[1],):
        raise ValueError(
            f"kernel {kernel.shape} / bias {bias.shape} mismatch")
    in_dim, classes = kernel.shape
    manifest = (f"ANET 1\nclasses {classes}\nlayers 1\n"
                f"layer {in_dim} {classes} softmax\nend\n")
    return (manifest.encode("ascii")
            + kernel.astype("<f4").tobytes()
            + bias.astype("<f4").tobytes())


def write_dataset(features: np.ndarray, labels: np.ndarray,
                  class_count: int) -> bytes:
    features = np.ascontiguousarray(features, dtype=np.float32)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if features.ndim != 2 or labels.shape != (len(features),):
        raise ValueError(
            f"features {features.shape} / labels {labels.shape} mismatch")
    if len(labels) and (labels.min() < 0 or labels.max() >= class_count):
        bad = int(np.argmax((labels < 0) | (labels >= class_count)))
        raise ValueError(
            f"row {bad}: label {labels[bad]} out of range for "
            f"{class_count} classes")
    n, width = features.shape
    row_dtype = np.dtype([("x", "<f4", (width,)), ("y", "<u2")])
    rows = np.empty(n, dtype=row_dtype)
    rows["x"] = features
    rows["y"] = labels.astype(np.uint16)
    return (DATASET_MAGIC + DATASET_HEADER.pack(n, width, class_count)
            + rows.tobytes())
