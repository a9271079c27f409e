import csv
import json
import struct
import subprocess
import sys

import numpy as np
import pytest
import torch
from torch import nn

from headexport import (ShapeMismatchError, UnsupportedHeadError,
                        export_activations, export_head, load_checkpoint,
                        penultimate_activations)
from headexport.cli import main_activations, main_head


# --- independent format parsers (the byte layout is the contract) ---

def parse_anet(data):
    end = data.index(b"\nend\n")
    manifest = data[:end].decode().splitlines()
    assert manifest[0] == "ANET 1"
    layers = []
    for line in manifest[1:]:
        if line.startswith("layer "):
            _, i, o, act = line.split()
            layers.append((int(i), int(o), act))
    flat = np.frombuffer(data[end + 5:], dtype="<f4")
    out, off = [], 0
    for i, o, act in layers:
        kernel = flat[off:off + i * o].reshape(i, o)
        off += i * o
        bias = flat[off:off + o]
        off += o
        out.append((kernel, bias, act))
    assert off == len(flat)
    return out


def parse_adat(data):
    assert data[:6] == b"ADAT1\n"
    n, width, classes = struct.unpack("<III", data[6:18])
    row = np.dtype([("x", "<f4", (width,)), ("y", "<u2")])
    rows = np.frombuffer(data[18:], dtype=row)
    assert len(rows) == n
    feats = rows["x"].reshape(n, width) if width else np.zeros((n, 0))
    return feats, rows["y"].astype(np.int64), classes, width


# --- fixtures ---

def make_model(seed=0):
    torch.manual_seed(seed)
    return nn.Sequential(nn.Linear(12, 16), nn.ReLU(),
                         nn.Linear(16, 5)).eval()


@pytest.fixture()
def checkpoint(tmp_path):
    path = tmp_path / "model.pt"
    torch.save(make_model(), path)
    return path


def make_dataset(n, dim=12, classes=5, seed=1):
    rng = np.random.default_rng(seed)
    return (rng.normal(0, 1, (n, dim)).astype(np.float32),
            rng.integers(0, classes, n))


# --- head export ---

class TestExportHead:
    def test_logit_parity_100_inputs(self):
        model = make_model()
        kernel, bias, act = parse_anet(export_head(model))[0]
        assert act == "softmax"
        feats, _ = make_dataset(100)
        cache = penultimate_activations(model, feats)
        with torch.no_grad():
            want = model(torch.from_numpy(feats)).numpy()
        got = cache @ kernel + bias
        assert np.abs(got - want).max() <= 1e-4

    def test_weight_orientation(self):
        model = make_model()
        kernel, bias, _ = parse_anet(export_head(model))[0]
        head = model[-1]
        assert kernel.shape == (16, 5)
        np.testing.assert_array_equal(kernel,
                                      head.weight.detach().numpy().T)
        np.testing.assert_array_equal(bias, head.bias.detach().numpy())

    def test_trailing_softmax_module_tolerated(self):
        model = nn.Sequential(nn.Linear(4, 3), nn.Softmax(dim=1)).eval()
        kernel, _, _ = parse_anet(export_head(model))[0]
        assert kernel.shape == (4, 3)

    def test_unsupported_head(self):
        conv = nn.Sequential(nn.Conv2d(1, 4, 3)).eval()
        with pytest.raises(UnsupportedHeadError, match="Conv2d"):
            export_head(conv)
        mlp = nn.Sequential(nn.Linear(4, 3), nn.Sigmoid()).eval()
        with pytest.raises(UnsupportedHeadError):
            export_head(mlp)

    def test_reexport_identical_bytes(self, checkpoint):
        a = export_head(load_checkpoint(checkpoint))
        b = export_head(load_checkpoint(checkpoint))
        assert a == b

    def test_non_module_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "tensor.pt"
        torch.save(torch.zeros(3), path)
        with pytest.raises(UnsupportedHeadError):
            load_checkpoint(path)


# --- activation export ---

class TestExportActivations:
    def test_rows_and_labels_preserved(self):
        model = make_model()
        feats, labels = make_dataset(10)
        cache, got_labels, classes, width = parse_adat(
            export_activations(model, feats, labels))
        assert len(cache) == 10 and width == 16 and classes == 5
        assert list(got_labels) == list(labels)
        with torch.no_grad():
            want = torch.relu(model[0](torch.from_numpy(feats))).numpy()
        np.testing.assert_allclose(cache, want, atol=1e-6)

    def test_empty_dataset(self):
        model = make_model()
        cache, labels, _, width = parse_adat(export_activations(
            model, np.zeros((0, 12), np.float32), np.zeros(0, np.int64)))
        assert len(cache) == 0 and width == 16

    def test_shape_mismatch(self):
        model = make_model()
        with pytest.raises(ShapeMismatchError):
            export_activations(model, np.zeros((3, 7), np.float32),
                               np.zeros(3, np.int64))

    def test_label_out_of_range(self):
        model = make_model()
        feats, _ = make_dataset(3)
        with pytest.raises(ValueError, match="row 0"):
            export_activations(model, feats, np.array([9, 0, 0]))


# --- CLI + end-to-end parity through the primary toolkit ---

class TestCli:
    def test_export_head_cli(self, checkpoint, tmp_path):
        out = tmp_path / "head"
        assert main_head(["--checkpoint", str(checkpoint),
                          "--out", str(out)]) == 0
        blob = (out / "head.anet").read_bytes()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["class_count"] == 5
        assert manifest["penultimate_width"] == 16
        assert manifest["activation_cache"] is False
        import hashlib
        assert manifest["files"]["head.anet"] == \
            hashlib.sha256(blob).hexdigest()

    def test_export_activations_cli_and_primary_parity(self, checkpoint,
                                                       tmp_path):
        """Argmax agreement >= 99.9% between torch and the repair
        toolkit's CLI run over the exported head + activation cache."""
        feats, labels = make_dataset(1000)
        npz = tmp_path / "data.npz"
        np.savez(npz, features=feats, labels=labels)
        out = tmp_path / "export"
        assert main_activations(["--checkpoint", str(checkpoint),
                                 "--dataset", str(npz),
                                 "--out", str(out)]) == 0

        eval_dir = tmp_path / "eval"
        proc = subprocess.run(
            [sys.executable, "-m", "netrepair.cli", "evaluate",
             "--model", str(out / "head.anet"),
             "--dataset", str(out / "cache.adat"),
             "--out", str(eval_dir)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr

        with open(eval_dir / "predictions.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        toolkit_preds = np.array([int(r["prediction"]) for r in rows])
        model = load_checkpoint(checkpoint)
        with torch.no_grad():
            torch_preds = model(torch.from_numpy(feats)).argmax(1).numpy()
        agreement = float((toolkit_preds == torch_preds).mean())
        assert agreement >= 0.999

    def test_missing_checkpoint(self, tmp_path):
        assert main_head(["--checkpoint", str(tmp_path / "nope.pt"),
                          "--out", str(tmp_path / "o")]) == 1

    def test_unsupported_head_cli(self, tmp_path):
        path = tmp_path / "conv.pt"
        torch.save(nn.Sequential(nn.Conv2d(1, 4, 3)), path)
        assert main_head(["--checkpoint", str(path),
                          "--out", str(tmp_path / "o")]) == 1
