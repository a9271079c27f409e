"""Command-line entry points `export-head` and `export-activations`."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .core import (ShapeMismatchError, UnsupportedHeadError, build_manifest,
                   export_activations, export_head, load_checkpoint)


def _load_npz_dataset(path):
    data = np.load(path)
    if "features" not in data or "labels" not in data:
        raise ValueError(
            f"{path}: expected an .npz with 'features' and 'labels' arrays")
    return data["features"], data["labels"]


def main_head(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-head",
        description="Export a torch checkpoint's dense softmax head as a "
                    ".anet model")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--out", required=True,
                        help="output directory for head.anet + manifest")
    args = parser.parse_args(argv)
    try:
        model = load_checkpoint(args.checkpoint)
        blob = export_head(model)
    except (UnsupportedHeadError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "head.anet").write_bytes(blob)
    manifest = build_manifest(args.checkpoint, model, False,
                              {"head.anet": blob})
    (out / "manifest.json").write_text(manifest.to_json())
    print(f"exported {manifest.penultimate_width}x{manifest.class_count} "
          f"head -> {out}")
    return 0


def main_activations(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-activations",
        description="Dump penultimate activations of a torch checkpoint "
                    "over an .npz dataset as a .adat cache")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--dataset", required=True,
                        help=".npz file with 'features' and 'labels'")
    parser.add_argument("--out", required=True,
                        help="output directory for cache.adat + head.anet")
    args = parser.parse_args(argv)
    try:
        model = load_checkpoint(args.checkpoint)
        features, labels = _load_npz_dataset(args.dataset)
        cache = export_activations(model, features, labels)
        head = export_head(model)
    except (UnsupportedHeadError, ShapeMismatchError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cache.adat").write_bytes(cache)
    (out / "head.anet").write_bytes(head)
    manifest = build_manifest(args.checkpoint, model, True,
                              {"cache.adat": cache, "head.anet": head})
    (out / "manifest.json").write_text(manifest.to_json())
    print(f"exported {len(labels)} activation rows "
          f"(width {manifest.penultimate_width}) -> {out}")
    return 0
