import math

import numpy as np
import pytest
from scipy.special import expit

import netdyn as nd
from netdyn.network import param_coords, unflatten
from netdyn.rng import derive_seed

from conftest import balanced_two_class, make_dataset


def naive_forward(arch, w, x):
    """Per-neuron loop evaluation, written independently of the vectorized path."""
    layer_input = list(x)
    for wl, bl in zip(w.weights, w.biases):
        out = []
        for i in range(wl.shape[0]):
            z = bl[i]
            for j in range(wl.shape[1]):
                z += wl[i, j] * layer_input[j]
            out.append(1.0 / (1.0 + math.exp(-z)))
        layer_input = out
    return np.array(layer_input)


def naive_loss(arch, w, data):
    """Sample-by-sample, unit-by-unit recomputation of the loss."""
    total = 0.0
    for i in range(data.n_samples):
        out = naive_forward(arch, w, data.inputs[i])
        for k in range(data.n_classes):
            p = min(max(out[k], 1e-12), 1 - 1e-12)
            y = data.targets[i, k]
            total -= y * math.log(p) + (1 - y) * math.log(1 - p)
    return total / data.n_samples


class TestArchitecture:
    def test_parameter_counts(self):
        assert nd.NetworkArchitecture((4, 10, 3)).n_params == 83
        assert nd.NetworkArchitecture((784, 64, 10)).n_params == 50890

    @pytest.mark.parametrize("sizes", [(4, 3), (4,), (4, 0, 3), (0, 10, 3)])
    def test_invalid_sizes_rejected(self, sizes):
        with pytest.raises(ValueError):
            nd.NetworkArchitecture(sizes)

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            nd.NetworkArchitecture((4, 10, 3), activation="relu")


class TestInitWeights:
    def test_biases_exactly_zero(self, iris_arch):
        w = nd.init_weights(iris_arch, 123)
        assert all(np.all(b == 0.0) for b in w.biases)

    def test_same_seed_bit_identical(self, iris_arch):
        a = nd.init_weights(iris_arch, 9).flatten()
        b = nd.init_weights(iris_arch, 9).flatten()
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self, iris_arch):
        a = nd.init_weights(iris_arch, 1).flatten()
        b = nd.init_weights(iris_arch, 2).flatten()
        assert not np.array_equal(a, b)

    def test_weights_standard_gaussian_moments(self):
        arch = nd.NetworkArchitecture((50, 100, 10))
        w = nd.init_weights(arch, 4)
        draws = np.concatenate([wl.ravel() for wl in w.weights])
        assert abs(draws.mean()) < 0.05
        assert abs(draws.std() - 1.0) < 0.05


class TestFlattening:
    def test_round_trip_identity(self, iris_arch):
        rng = np.random.default_rng(0)
        for _ in range(20):
            vec = rng.normal(size=iris_arch.n_params)
            back = unflatten(iris_arch, vec).flatten()
            assert np.array_equal(back, vec)

    def test_canonical_order_matches_coords(self, iris_arch):
        coords = param_coords(iris_arch)
        # first block: layer 1 weights, row-major; then layer 1 biases
        assert coords[0]["layer"] == 1 and not coords[0]["is_bias"]
        assert coords[39]["row"] == 9 and coords[39]["col"] == 3
        assert coords[40]["is_bias"] and coords[40]["row"] == 0
        assert coords[50]["layer"] == 2 and not coords[50]["is_bias"]
        assert coords[80]["is_bias"] and coords[80]["layer"] == 2

    def test_wrong_length_rejected(self, iris_arch):
        with pytest.raises(ValueError):
            unflatten(iris_arch, np.zeros(82))


class TestForward:
    def test_zero_weights_give_one_half(self, iris_arch):
        w = unflatten(iris_arch, np.zeros(83))
        out = nd.forward(iris_arch, w, np.array([1.0, -2.0, 0.5, 3.0]))
        assert np.allclose(out, 0.5, atol=0)

    def test_monotone_in_output_bias(self):
        arch = nd.NetworkArchitecture((1, 1, 1))
        outs = []
        for b in (0.0, 2.0, 5.0, 20.0):
            w = nd.WeightSet([np.zeros((1, 1)), np.zeros((1, 1))],
                             [np.zeros(1), np.array([b])])
            outs.append(nd.forward(arch, w, np.array([0.7]))[0])
        assert all(a < b for a, b in zip(outs, outs[1:]))
        assert outs[-1] > 1 - 1e-8

    def test_matches_naive_loop_oracle(self, iris_arch, iris_train):
        w = nd.init_weights(iris_arch, 5)
        for i in range(5):
            got = nd.forward(iris_arch, w, iris_train.inputs[i])
            want = naive_forward(iris_arch, w, iris_train.inputs[i])
            assert np.max(np.abs(got - want)) < 1e-12

    def test_outputs_open_unit_interval(self, iris_arch):
        w = nd.init_weights(iris_arch, 11)
        out = nd.forward(iris_arch, w, np.full(4, 50.0))
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_dimension_mismatch_rejected(self, iris_arch):
        w = nd.init_weights(iris_arch, 0)
        with pytest.raises(ValueError):
            nd.forward(iris_arch, w, np.zeros(5))


class TestLoss:
    def test_zero_net_loss_is_k_log_two(self, iris_arch):
        data = make_dataset(12, 4, 3, seed=1)
        w = unflatten(iris_arch, np.zeros(83))
        # every output unit sits at 0.5, contributing ln 2 each
        assert nd.loss(iris_arch, w, data) == pytest.approx(3 * math.log(2), abs=1e-12)

    def test_perfect_one_hot_output_gives_zero(self):
        arch = nd.NetworkArchitecture((2, 2, 2))
        data = make_dataset(6, 2, 2, seed=2)
        # drive outputs to the exact targets via huge output biases
        big = 1e3
        w = nd.WeightSet(
            [np.zeros((2, 2)), np.zeros((2, 2))],
            [np.zeros(2), np.array([big, -big])],
        )
        forced = nd.Dataset(data.inputs, np.tile([1.0, 0.0], (6, 1)), np.zeros(6, dtype=int))
        assert nd.loss(arch, w, forced) < 1e-9

    def test_matches_per_sample_oracle(self, iris_arch, iris_train):
        w = nd.init_weights(iris_arch, 3)
        small = nd.Dataset(iris_train.inputs[:5], iris_train.targets[:5], iris_train.labels[:5])
        assert nd.loss(iris_arch, w, small) == pytest.approx(
            naive_loss(iris_arch, w, small), abs=1e-12
        )

    def test_duplication_invariance(self, iris_arch):
        data = make_dataset(8, 4, 3, seed=3)
        doubled = nd.Dataset(
            np.vstack([data.inputs, data.inputs]),
            np.vstack([data.targets, data.targets]),
            np.concatenate([data.labels, data.labels]),
        )
        w = nd.init_weights(iris_arch, 8)
        assert nd.loss(iris_arch, w, doubled) == pytest.approx(
            nd.loss(iris_arch, w, data), rel=1e-15
        )


def finite_difference_gradient(arch, w, data, step=1e-6):
    flat = w.flatten()
    out = np.empty_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += step
        dn = flat.copy()
        dn[i] -= step
        out[i] = (
            nd.loss(arch, unflatten(arch, up), data)
            - nd.loss(arch, unflatten(arch, dn), data)
        ) / (2 * step)
    return out


class TestGradient:
    def test_matches_finite_differences(self, iris_arch):
        data = make_dataset(10, 4, 3, seed=4)
        w = nd.init_weights(iris_arch, 21)
        g = nd.gradient(iris_arch, w, data).flatten()
        fd = finite_difference_gradient(iris_arch, w, data)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
        small = np.abs(fd) < 1e-3
        assert np.all(rel[~small] < 1e-6)
        assert np.all(np.abs(g - fd)[small] < 1e-9)

    def test_duplicated_dataset_identical_gradient(self, iris_arch):
        data = make_dataset(6, 4, 3, seed=5)
        doubled = nd.Dataset(
            np.vstack([data.inputs, data.inputs]),
            np.vstack([data.targets, data.targets]),
            np.concatenate([data.labels, data.labels]),
        )
        w = nd.init_weights(iris_arch, 31)
        g1 = nd.gradient(iris_arch, w, data).flatten()
        g2 = nd.gradient(iris_arch, w, doubled).flatten()
        assert np.max(np.abs(g1 - g2)) < 1e-15

    def test_zero_at_constructed_critical_point(self):
        # balanced two-class data makes the all-zero state an exact saddle;
        # n=8 keeps every per-sample delta dyadic, so the zero is bitwise
        arch = nd.NetworkArchitecture((3, 4, 2))
        data = balanced_two_class(n_per_class=4, n_features=3)
        w = unflatten(arch, np.zeros(arch.n_params))
        g = nd.gradient(arch, w, data).flatten()
        assert np.max(np.abs(g)) == 0.0

    def test_one_step_descent_exists(self, iris_arch):
        data = make_dataset(15, 4, 3, seed=6)
        w = nd.init_weights(iris_arch, 41)
        base = nd.loss(iris_arch, w, data)
        for eta in (1.0, 0.1, 0.01, 1e-3):
            if nd.loss(iris_arch, nd.gd_step(iris_arch, w, eta, data), data) < base:
                return
        pytest.fail("no step size decreased the loss at a non-critical point")


class TestAccuracy:
    def test_perfect_outputs(self):
        arch = nd.NetworkArchitecture((2, 2, 2))
        data = balanced_two_class(n_per_class=3, n_features=2)
        big = 1e3
        # separate by sign of the second feature alone
        w = nd.WeightSet(
            [np.array([[0.0, big], [0.0, -big]]), np.array([[big, 0.0], [0.0, big]])],
            [np.zeros(2), np.array([-big / 2, -big / 2])],
        )
        out = nd.forward(arch, w, data.inputs)
        labels = np.argmax(out, axis=1)
        forced = nd.Dataset(data.inputs, np.eye(2)[labels], labels)
        assert nd.accuracy(arch, w, forced) == 1.0

    def test_zero_weights_tie_rule(self, iris_arch):
        data = make_dataset(30, 4, 3, seed=7)
        w = unflatten(iris_arch, np.zeros(83))
        # all outputs tie at 0.5; argmax resolves to class 0
        expected = np.mean(data.labels == 0)
        assert nd.accuracy(iris_arch, w, data) == pytest.approx(expected)

    def test_trained_iris_reaches_ninety_percent(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, derive_seed(3, "init", 0))
        traj = nd.train(iris_arch, w0, nd.GDConfig(0.01, 4000), iris_train)
        assert nd.accuracy(iris_arch, traj.final, iris_train) >= 0.9


class TestDataset:
    def test_one_hot_validation(self):
        with pytest.raises(ValueError):
            nd.Dataset(np.zeros((2, 3)), np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]))

    def test_labels_consistency(self):
        targets = np.array([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            nd.Dataset(np.zeros((2, 2)), targets, labels=np.array([1, 1]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nd.Dataset(np.zeros((0, 2)), np.zeros((0, 2)))
