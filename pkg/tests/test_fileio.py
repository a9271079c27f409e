import numpy as np
import pytest

from netrepair.fileio import (InconsistencyError, Patch,
                              PatchValidationError, TruncationError,
                              ValidationError, VersionError, load_dataset,
                              load_model, load_patch, save_dataset,
                              save_model, save_patch, validate_patch_coords)
from netrepair.nets import Dataset, DenseLayer, NetworkModel
from netrepair.pso import apply_patch


def small_model(seed=0):
    rng = np.random.default_rng(seed)
    return NetworkModel((
        DenseLayer(rng.normal(0, 1, (4, 3)).astype(np.float32),
                   rng.normal(0, 1, 3).astype(np.float32), "relu"),
        DenseLayer(rng.normal(0, 1, (3, 3)).astype(np.float32),
                   rng.normal(0, 1, 3).astype(np.float32), "softmax")), 3)


class TestModelFormat:
    def test_round_trip(self):
        model = small_model()
        back = load_model(save_model(model))
        assert back.class_count == 3
        for a, b in zip(model.layers, back.layers):
            assert a.kernel.tobytes() == b.kernel.tobytes()
            assert a.bias.tobytes() == b.bias.tobytes()
            assert a.activation == b.activation

    def test_truncated_payload(self):
        data = save_model(small_model())
        with pytest.raises(TruncationError):
            load_model(data[:-1])

    def test_float_count_mismatch(self):
        # kernel (4,3) + bias = 15 floats for a 1-layer net; supply 11
        manifest = b"ANET 1\nclasses 3\nlayers 1\nlayer 4 3 softmax\nend\n"
        with pytest.raises(InconsistencyError):
            load_model(manifest + b"\x00" * 44)

    def test_missing_end_marker(self):
        with pytest.raises(TruncationError):
            load_model(b"ANET 1\nclasses 3\nlayers 1\n")

    def test_version_error(self):
        with pytest.raises(VersionError):
            load_model(b"ANET 9\nclasses 3\nlayers 0\nend\n")

    def test_byte_determinism(self):
        model = small_model(4)
        assert save_model(model) == save_model(model)


class TestDatasetFormat:
    def test_empty_dataset(self):
        d = Dataset(np.zeros((0, 5), np.float32), np.zeros(0, np.int64))
        back, classes = load_dataset(save_dataset(d, 7))
        assert len(back) == 0 and back.feature_dim == 5 and classes == 7

    def test_label_out_of_range_names_row(self):
        d = Dataset(np.zeros((3, 2), np.float32), np.array([0, 3, 1]))
        with pytest.raises(ValidationError, match="row 1"):
            save_dataset(d, 3)

    def test_round_trip_bytes(self):
        rng = np.random.default_rng(9)
        d = Dataset(rng.normal(0, 1, (100, 8)).astype(np.float32),
                    rng.integers(0, 5, 100))
        blob = save_dataset(d, 5)
        back, classes = load_dataset(blob)
        assert classes == 5
        assert back.features.tobytes() == d.features.tobytes()
        assert list(back.labels) == list(d.labels)
        assert save_dataset(back, classes) == blob

    def test_truncated(self):
        blob = save_dataset(
            Dataset(np.zeros((2, 2), np.float32), np.zeros(2)), 1)
        with pytest.raises(TruncationError):
            load_dataset(blob[:-3])

    def test_trailing_bytes(self):
        blob = save_dataset(
            Dataset(np.zeros((2, 2), np.float32), np.zeros(2)), 1)
        with pytest.raises(InconsistencyError):
            load_dataset(blob + b"x")

    def test_bad_magic(self):
        with pytest.raises(VersionError):
            load_dataset(b"NOPE1\n" + b"\x00" * 12)


class TestPatchFormat:
    def test_empty_patch_is_identity(self):
        model = small_model()
        patched = apply_patch(model, Patch(()))
        assert save_model(patched) == save_model(model)

    def test_duplicate_coordinate(self):
        with pytest.raises(PatchValidationError):
            Patch(((1, 0, 0, 0.5), (1, 0, 0, 0.7)))

    def test_five_weight_round_trip_bytes(self):
        rng = np.random.default_rng(2)
        entries = tuple((1, int(i), int(j), float(v)) for (i, j), v in zip(
            [(0, 0), (0, 1), (1, 2), (2, 0), (2, 2)],
            rng.normal(0, 10, 5)))
        patch = Patch(entries, seed=42, method="loc", fitness=3.14159)
        blob = save_patch(patch)
        back = load_patch(blob)
        assert back.entries == patch.entries
        assert back.seed == 42 and back.method == "loc"
        assert save_patch(back) == blob

    def test_values_round_trip_exact_f32(self):
        vals = [1 / 3, -2.5e-7, 1e20, 0.1]
        patch = Patch(tuple((1, 0, k, v) for k, v in enumerate(vals)))
        back = load_patch(save_patch(patch))
        for (_, _, _, a), v in zip(back.entries, vals):
            assert np.float32(a) == np.float32(v)

    def test_entry_count_mismatch(self):
        blob = save_patch(Patch(((1, 0, 0, 1.0), (1, 1, 1, 2.0))))
        clipped = b"\n".join(blob.splitlines()[:-1]) + b"\n"
        with pytest.raises(InconsistencyError):
            load_patch(clipped)

    def test_coord_validation_against_model(self):
        model = small_model()
        with pytest.raises(PatchValidationError, match="layer 0"):
            validate_patch_coords(Patch(((0, 0, 0, 1.0),)), model)
        with pytest.raises(PatchValidationError):
            validate_patch_coords(Patch(((1, 3, 0, 1.0),)), model)
