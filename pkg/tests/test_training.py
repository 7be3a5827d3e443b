import numpy as np
import pytest

import netdyn as nd
from netdyn.network import unflatten
from netdyn.rng import derive_seed
from netdyn.training import write_trajectory_csv

from conftest import balanced_two_class, make_dataset


class TestGDConfig:
    @pytest.mark.parametrize("kwargs", [
        {"eta": 0.0, "iterations": 10},
        {"eta": -1.0, "iterations": 10},
        {"eta": 0.1, "iterations": -1},
        {"eta": 0.1, "iterations": 10, "snapshot_stride": 0},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            nd.GDConfig(**kwargs)


class TestGDStep:
    def test_matches_map_definition_bitwise(self, iris_arch):
        data = make_dataset(9, 4, 3, seed=10)
        w = nd.init_weights(iris_arch, 2)
        eta = 0.37
        stepped = nd.gd_step(iris_arch, w, eta, data).flatten()
        by_hand = w.flatten() - eta * nd.gradient(iris_arch, w, data).flatten()
        assert np.array_equal(stepped, by_hand)

    def test_eta_zero_is_identity(self, iris_arch):
        data = make_dataset(9, 4, 3, seed=11)
        w = nd.init_weights(iris_arch, 3)
        assert np.array_equal(nd.gd_step(iris_arch, w, 0.0, data).flatten(),
                              w.flatten())

    def test_critical_point_is_fixed_point(self):
        arch = nd.NetworkArchitecture((3, 4, 2))
        data = balanced_two_class(n_per_class=4, n_features=3)
        w = unflatten(arch, np.zeros(arch.n_params))
        stepped = nd.gd_step(arch, w, 0.5, data)
        assert np.array_equal(stepped.flatten(), w.flatten())


class TestTrain:
    def test_zero_iterations_single_snapshot(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 1)
        traj = nd.train(iris_arch, w0, nd.GDConfig(0.1, 0), iris_train)
        assert len(traj.snapshots) == 1
        assert len(traj.loss_series) == 1
        assert np.array_equal(traj.initial.flatten(), w0.flatten())

    def test_series_lengths_and_grid(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 2)
        traj = nd.train(iris_arch, w0, nd.GDConfig(0.05, 25, snapshot_stride=10), iris_train)
        assert len(traj.loss_series) == 26
        assert list(traj.snapshot_iterations) == [0, 10, 20, 25]
        assert len(traj.weight_norm_l1) == 26 and len(traj.weight_norm_l2) == 26

    def test_deterministic_bitwise(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 5)
        a = nd.train(iris_arch, w0, nd.GDConfig(0.02, 300), iris_train)
        b = nd.train(iris_arch, w0, nd.GDConfig(0.02, 300), iris_train)
        assert np.array_equal(a.loss_series, b.loss_series)
        assert np.array_equal(a.final.flatten(), b.final.flatten())

    def test_composition(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 6)
        whole = nd.train(iris_arch, w0, nd.GDConfig(0.02, 200), iris_train)
        part1 = nd.train(iris_arch, w0, nd.GDConfig(0.02, 120), iris_train)
        part2 = nd.train(iris_arch, part1.final, nd.GDConfig(0.02, 80), iris_train)
        assert np.array_equal(part2.final.flatten(), whole.final.flatten())
        assert np.array_equal(
            np.concatenate([part1.loss_series, part2.loss_series[1:]]),
            whole.loss_series,
        )
        # snapshot-for-snapshot at the stitched iterations
        assert np.array_equal(part2.snapshot_at(80 - 0).flatten(),
                              whole.snapshot_at(200).flatten())

    def test_low_eta_iris_monotone(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, derive_seed(0, "init", 0))
        traj = nd.train(iris_arch, w0, nd.GDConfig(0.01, 800), iris_train)
        assert np.max(np.diff(traj.loss_series)) <= 1e-12

    def test_divergence_flagged_and_truncated(self, iris_arch):
        # bounded activations make genuine overflow nearly impossible, so a
        # non-finite input is used to drive the state non-finite
        data = make_dataset(8, 4, 3, seed=12)
        poisoned = nd.Dataset(
            np.where(np.arange(8)[:, None] == 0, np.inf, data.inputs),
            data.targets, data.labels,
        )
        w0 = nd.init_weights(iris_arch, 7)
        traj = nd.train(iris_arch, w0, nd.GDConfig(0.1, 50), poisoned)
        assert traj.diverged_at is not None
        t_last = traj.snapshot_iterations[-1]
        assert traj.diverged_at == t_last + 1
        assert len(traj.loss_series) == t_last + 1
        assert all(np.isfinite(w.flatten()).all() for _, w in traj.snapshots)

    def test_fixed_point_residence(self):
        arch = nd.NetworkArchitecture((3, 4, 2))
        data = balanced_two_class(n_per_class=4, n_features=3)
        w0 = unflatten(arch, np.zeros(arch.n_params))
        traj = nd.train(arch, w0, nd.GDConfig(0.5, 20), data)
        assert np.array_equal(traj.final.flatten(), w0.flatten())
        assert np.all(traj.loss_series == traj.loss_series[0])

    def test_accuracy_recording(self, iris_arch, iris_split):
        train_d, test_d = iris_split
        w0 = nd.init_weights(iris_arch, 8)
        traj = nd.train(iris_arch, w0, nd.GDConfig(0.05, 30), train_d,
                        eval_data=test_d, record_accuracy=True)
        assert traj.accuracy_train.shape == (31,)
        assert traj.accuracy_test.shape == (31,)
        assert np.all((traj.accuracy_train >= 0) & (traj.accuracy_train <= 1))


class TestSerialization:
    def test_binary_round_trip(self, iris_arch, iris_train, tmp_path):
        w0 = nd.init_weights(iris_arch, 9)
        config = nd.GDConfig(0.05, 40, snapshot_stride=8)
        traj = nd.train(iris_arch, w0, config, iris_train)
        path = tmp_path / "traj.bin"
        nd.save_trajectory(path, traj, iris_arch, config, seed=9)
        header, iters, frames = nd.load_trajectory(path)
        assert header["layer_sizes"] == [4, 10, 3]
        assert header["eta"] == 0.05 and header["seed"] == 9
        assert np.array_equal(iters, traj.snapshot_iterations)
        assert np.array_equal(frames, traj.flat_snapshots())

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a trajectory at all")
        with pytest.raises(ValueError):
            nd.load_trajectory(path)

    def test_csv_round_trip_values(self, iris_arch, iris_train, tmp_path):
        w0 = nd.init_weights(iris_arch, 10)
        traj = nd.train(iris_arch, w0, nd.GDConfig(0.05, 20), iris_train,
                        record_accuracy=True)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, traj)
        rows = path.read_text().strip().split("\n")
        assert rows[0] == "iteration,loss,accuracy_train,accuracy_test,weight_norm_l1,weight_norm_l2"
        assert len(rows) == 22
        loss_back = np.array([float(r.split(",")[1]) for r in rows[1:]])
        assert np.array_equal(loss_back, traj.loss_series)  # repr round-trips
