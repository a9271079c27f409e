"""Bit-exact file formats: models (.anet), datasets and activation caches
(.adat), and weight patches (.apatch).

Models carry a human-readable text manifest followed by a little-endian
float32 payload, layer-major, kernel then bias. Datasets are a small binary
header followed by fixed-size rows (float32 features + uint16 label).
Patches are plain text; float32 values are written with the shortest
representation that round-trips exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .nets import Dataset, DenseLayer, NetworkModel

MODEL_MAGIC = "ANET"
MODEL_VERSION = 1
DATASET_MAGIC = b"ADAT1\n"
DATASET_HEADER = struct.Struct("<III")  # count, feature width, class count
PATCH_MAGIC = "APATCH"
PATCH_VERSION = 1


class FormatError(ValueError):
    """Base class for malformed files."""


class VersionError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class InconsistencyError(FormatError):
    """Declared dimensions and payload size disagree."""


class ValidationError(FormatError):
    pass


class PatchValidationError(ValidationError):
    pass


def _f32_repr(value) -> str:
    return np.format_float_positional(
        np.float32(value), unique=True, trim="0")


# --- models ---

def save_model(model: NetworkModel) -> bytes:
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}",
             f"classes {model.class_count}",
             f"layers {len(model.layers)}"]
    for layer in model.layers:
        lines.append(f"layer {layer.in_dim} {layer.out_dim} {layer.activation}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    chunks = [header]
    for layer in model.layers:
        chunks.append(layer.kernel.astype("<f4").tobytes())
        chunks.append(layer.bias.astype("<f4").tobytes())
    return b"".join(chunks)


def load_model(data: bytes) -> NetworkModel:
    end = data.find(b"\nend\n")
    if end < 0:
        raise TruncationError("manifest has no 'end' marker")
    manifest = data[:end].decode("ascii").splitlines()
    payload = data[end + len(b"\nend\n"):]

    magic = manifest[0].split()
    if magic[0] != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic[0]!r}")
    if int(magic[1]) != MODEL_VERSION:
        raise VersionError(f"unsupported model version {magic[1]}")

    fields = {}
    dims = []
    for line in manifest[1:]:
        key, *rest = line.split()
        if key == "layer":
            dims.append((int(rest[0]), int(rest[1]), rest[2]))
        else:
            fields[key] = rest[0]
    class_count = int(fields["classes"])
    if len(dims) != int(fields["layers"]):
        raise InconsistencyError("declared layer count != layer lines")

    if len(payload) % 4 != 0:
        raise TruncationError(
            f"payload length {len(payload)} is not a whole number of floats")
    expected = sum(i * o + o for i, o, _ in dims)
    got = len(payload) // 4
    if got != expected:
        raise InconsistencyError(
            f"manifest declares {expected} floats, payload holds {got}")

    flat = np.frombuffer(payload, dtype="<f4")
    layers = []
    off = 0
    for in_dim, out_dim, act in dims:
        kernel = flat[off:off + in_dim * out_dim].reshape(in_dim, out_dim)
        off += in_dim * out_dim
        bias = flat[off:off + out_dim]
        off += out_dim
        layers.append(DenseLayer(kernel.copy(), bias.copy(), act))
    return NetworkModel(tuple(layers), class_count)


# --- datasets / activation caches ---

def save_dataset(dataset: Dataset, class_count: int) -> bytes:
    labels = dataset.labels
    if len(labels) and (labels.min() < 0 or labels.max() >= class_count):
        bad = int(np.argmax((labels < 0) | (labels >= class_count)))
        raise ValidationError(
            f"row {bad}: label {labels[bad]} out of range for "
            f"{class_count} classes")
    n, width = dataset.features.shape
    header = DATASET_MAGIC + DATASET_HEADER.pack(n, width, class_count)
    row_dtype = np.dtype([("x", "<f4", (width,)), ("y", "<u2")])
    rows = np.empty(n, dtype=row_dtype)
    rows["x"] = dataset.features
    rows["y"] = labels.astype(np.uint16)
    return header + rows.tobytes()


def load_dataset(data: bytes) -> tuple[Dataset, int]:
    """Returns (dataset, class_count)."""
    hdr_len = len(DATASET_MAGIC) + DATASET_HEADER.size
    if len(data) < hdr_len:
        raise TruncationError("dataset shorter than its header")
    if data[:len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise VersionError(f"bad dataset magic {data[:6]!r}")
    n, width, class_count = DATASET_HEADER.unpack(
        data[len(DATASET_MAGIC):hdr_len])
    expected = hdr_len + n * (4 * width + 2)
    if len(data) < expected:
        raise TruncationError(
            f"dataset payload is {expected - len(data)} bytes short")
    if len(data) > expected:
        raise InconsistencyError(
            f"dataset payload has {len(data) - expected} trailing bytes")
    row_dtype = np.dtype([("x", "<f4", (width,)), ("y", "<u2")])
    rows = np.frombuffer(data[hdr_len:], dtype=row_dtype)
    labels = rows["y"].astype(np.int64)
    bad = np.nonzero(labels >= class_count)[0]
    if len(bad):
        raise ValidationError(
            f"row {bad[0]}: label {labels[bad[0]]} out of range for "
            f"{class_count} classes")
    if width == 0:
        feats = np.zeros((n, 0), dtype=np.float32)
    else:
        feats = rows["x"].reshape(n, width).copy()
    return Dataset(feats, labels), class_count


# --- patches ---

@dataclass
class Patch:
    """Replacement values for specific final-layer kernel entries."""

    entries: tuple  # of (layer_index, i, j, float32 value)
    seed: int = 0
    method: str = "loc"
    fitness: float = 0.0

    def __post_init__(self):
        self.entries = tuple(
            (int(l), int(i), int(j), float(np.float32(v)))
            for l, i, j, v in self.entries)
        coords = [(l, i, j) for l, i, j, _ in self.entries]
        if len(set(coords)) != len(coords):
            raise PatchValidationError("duplicate coordinate in patch")


def save_patch(patch: Patch) -> bytes:
    lines = [f"{PATCH_MAGIC} {PATCH_VERSION}",
             f"seed {patch.seed}",
             f"method {patch.method}",
             f"fitness {patch.fitness!r}",
             f"count {len(patch.entries)}"]
    for l, i, j, v in patch.entries:
        lines.append(f"{l} {i} {j} {_f32_repr(v)}")
    return ("\n".join(lines) + "\n").encode("ascii")


def load_patch(data: bytes) -> Patch:
    lines = data.decode("ascii").splitlines()
    magic = lines[0].split()
    if magic[0] != PATCH_MAGIC:
        raise FormatError(f"bad patch magic {magic[0]!r}")
    if int(magic[1]) != PATCH_VERSION:
        raise VersionError(f"unsupported patch version {magic[1]}")
    meta = {}
    body_at = None
    for k, line in enumerate(lines[1:], start=1):
        key, _, rest = line.partition(" ")
        if key == "count":
            meta["count"] = int(rest)
            body_at = k + 1
            break
        meta[key] = rest
    if body_at is None:
        raise TruncationError("patch has no count line")
    body = lines[body_at:]
    if len(body) != meta["count"]:
        raise InconsistencyError(
            f"patch declares {meta['count']} entries, found {len(body)}")
    entries = []
    for line in body:
        l, i, j, v = line.split()
        entries.append((int(l), int(i), int(j), float(np.float32(v))))
    return Patch(tuple(entries), seed=int(meta.get("seed", 0)),
                 method=meta.get("method", "loc"),
                 fitness=float(meta.get("fitness", 0.0)))


def validate_patch_coords(patch: Patch, model: NetworkModel) -> None:
    head_idx = len(model.layers) - 1
    h, c = model.head.kernel.shape
    for l, i, j, _ in patch.entries:
        if l != head_idx:
            raise PatchValidationError(
                f"patch targets layer {l}, only final layer {head_idx} "
                "is patchable")
        if not (0 <= i < h and 0 <= j < c):
            raise PatchValidationError(
                f"coordinate ({i}, {j}) outside final kernel {h}x{c}")
