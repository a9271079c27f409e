import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netrepair.nets import (Dataset, DenseLayer, NetworkModel, ShapeError,
                            cross_entropy, forward, head_forward,
                            last_layer_gradient, penultimate, softmax)


def one_layer_identity(n=2):
    return NetworkModel(
        (DenseLayer(np.eye(n, dtype=np.float32),
                    np.zeros(n, dtype=np.float32), "softmax"),), n)


def random_model(rng, dims=(6, 5, 4)):
    layers = []
    for k in range(len(dims) - 1):
        act = "softmax" if k == len(dims) - 2 else "relu"
        layers.append(DenseLayer(
            rng.normal(0, 0.8, (dims[k], dims[k + 1])).astype(np.float32),
            rng.normal(0, 0.1, dims[k + 1]).astype(np.float32), act))
    return NetworkModel(tuple(layers), dims[-1])


class TestForward:
    def test_equal_logits_give_uniform(self):
        out = forward(one_layer_identity(), np.zeros(2, dtype=np.float32))
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_hand_computed_softmax(self):
        out = forward(one_layer_identity(), np.array([1.0, 0.0]))
        e = math.e
        np.testing.assert_allclose(out, [e / (e + 1), 1 / (e + 1)],
                                   atol=1e-6)

    def test_output_sums_to_one(self):
        rng = np.random.default_rng(0)
        model = random_model(rng)
        for _ in range(20):
            out = forward(model, rng.normal(0, 3, 6).astype(np.float32))
            assert abs(out.sum() - 1.0) < 1e-6
            assert np.all(out >= 0) and np.all(out <= 1)

    def test_shape_error_names_layer(self):
        model = random_model(np.random.default_rng(0))
        with pytest.raises(ShapeError, match="layer 0"):
            forward(model, np.zeros(7, dtype=np.float32))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        model = random_model(rng)
        x = rng.normal(0, 1, 6).astype(np.float32)
        a = forward(model, x)
        b = forward(model, x)
        assert a.tobytes() == b.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_normalised(logits):
    out = softmax(np.array(logits, dtype=np.float32))
    assert abs(float(out.sum()) - 1.0) < 1e-6


class TestPenultimate:
    def test_one_layer_cache_is_input(self):
        model = one_layer_identity()
        x = np.array([[0.3, -1.2], [2.0, 0.5]], dtype=np.float32)
        np.testing.assert_array_equal(penultimate(model, x), x)

    def test_matches_instrumented_forward(self):
        rng = np.random.default_rng(1)
        model = random_model(rng)
        xs = rng.normal(0, 1, (10, 6)).astype(np.float32)
        cache = penultimate(model, xs)
        full = forward(model, xs)
        via_head = head_forward(model.head, cache)
        np.testing.assert_allclose(via_head, full, atol=1e-6)

    def test_empty_batch(self):
        model = random_model(np.random.default_rng(2))
        cache = penultimate(model, np.zeros((0, 6), dtype=np.float32))
        assert cache.shape == (0, 5)


class TestCrossEntropy:
    def test_one_hot_is_zero(self):
        assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0

    def test_uniform_ten_classes(self):
        probs = np.full(10, 0.1)
        assert abs(cross_entropy(probs, 3) - math.log(10)) < 1e-9

    def test_zero_probability_floored(self):
        val = cross_entropy(np.array([1.0, 0.0]), 1)
        assert abs(val - (-math.log(1e-12))) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(np.array([0.5, 0.5]), 2)

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = rng.dirichlet(np.ones(4))
            assert cross_entropy(p, int(rng.integers(4))) >= 0


def finite_difference_gradient(model, x, label, h=1e-4):
    """Central differences on the final kernel; the independent oracle.

    The penultimate cache is fixed (the gradient is taken with respect to
    the head kernel only); the perturbed head runs in float64 so the
    h=1e-4 differences are not swamped by float32 rounding.
    """
    o = penultimate(model, np.asarray(x)[None, :])[0].astype(np.float64)
    bias = model.head.bias.astype(np.float64)
    base = model.head.kernel.astype(np.float64)

    def loss(kernel):
        z = o @ kernel + bias
        z = z - z.max()
        p = np.exp(z) / np.exp(z).sum()
        return -np.log(max(p[label], 1e-12))

    grad = np.zeros(base.shape, dtype=np.float64)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            for sign in (+1, -1):
                k = base.copy()
                k[i, j] += sign * h
                grad[i, j] += sign * loss(k)
    return grad / (2 * h)


class TestLastLayerGradient:
    def test_zero_penultimate_gives_zero(self):
        kernel = np.zeros((3, 2), dtype=np.float32)
        hidden = DenseLayer(kernel.T.copy(), np.zeros(3, np.float32), "relu")
        head = DenseLayer(np.ones((3, 2), np.float32),
                          np.zeros(2, np.float32), "softmax")
        model = NetworkModel((hidden, head), 2)
        g = last_layer_gradient(model, np.array([-1.0, -1.0],
                                                dtype=np.float32), 0)
        np.testing.assert_array_equal(g, np.zeros((3, 2)))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            model = random_model(rng)
            x = rng.normal(0, 1, 6).astype(np.float32)
            label = int(rng.integers(4))
            analytic = last_layer_gradient(model, x, label)
            numeric = finite_difference_gradient(model, x, label)
            rel = np.abs(analytic - numeric) / np.maximum(
                np.abs(numeric), 1e-6)
            assert rel.max() < 1e-4

    def test_entry_formula(self):
        rng = np.random.default_rng(12)
        model = random_model(rng)
        x = rng.normal(0, 1, 6).astype(np.float32)
        label = 2
        o = penultimate(model, x[None, :])[0].astype(np.float64)
        p = forward(model, x).astype(np.float64)
        delta = p.copy()
        delta[label] -= 1
        np.testing.assert_allclose(last_layer_gradient(model, x, label),
                                   np.outer(o, delta), atol=1e-6)


class TestDataset:
    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2), np.float32), np.zeros(4))

    def test_subset(self):
        d = Dataset(np.arange(6, dtype=np.float32).reshape(3, 2),
                    np.array([0, 1, 2]))
        s = d.subset(np.array([2, 0]))
        assert list(s.labels) == [2, 0]
