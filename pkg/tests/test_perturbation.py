import numpy as np
import pytest

import netdyn as nd
from netdyn.rng import derive_seed

from conftest import make_dataset


class TestPerturbationSpec:
    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            nd.PerturbationSpec(epsilon=0.0, count=5)

    def test_empty_mask_forbidden(self):
        with pytest.raises(ValueError):
            nd.PerturbationSpec(epsilon=1e-8, count=5, mask=())

    def test_duplicate_mask_rejected(self):
        with pytest.raises(ValueError):
            nd.PerturbationSpec(epsilon=1e-8, count=5, mask=(1, 1, 2))


class TestPerturb:
    def test_initial_distance_bounds(self, iris_arch):
        w = nd.init_weights(iris_arch, 0)
        spec = nd.PerturbationSpec(epsilon=1e-6, count=1, seed=3)
        for j in range(10):
            d0 = nd.l1_distance(w, nd.perturb(w, spec, j))
            assert 0.0 < d0 <= 83 * 1e-6

    def test_mean_initial_distance_half_epsilon_per_param(self, iris_arch):
        # E|Uniform(-eps, eps)| = eps/2, so E d(0) = 83 * eps / 2
        w = nd.init_weights(iris_arch, 1)
        eps = 1e-4
        spec = nd.PerturbationSpec(epsilon=eps, count=1, seed=5)
        draws = 10_000
        total = 0.0
        flat = w.flatten()
        for j in range(draws):
            total += np.sum(np.abs(nd.perturb(w, spec, j).flatten() - flat))
        mean_d0 = total / draws
        assert mean_d0 == pytest.approx(83 * eps / 2, rel=0.05)

    def test_epsilon_scaling_doubles_distance(self, iris_arch):
        w = nd.init_weights(iris_arch, 2)
        flat = w.flatten()
        means = []
        for eps in (1e-6, 2e-6):
            spec = nd.PerturbationSpec(epsilon=eps, count=1, seed=11)
            d = [np.sum(np.abs(nd.perturb(w, spec, j).flatten() - flat))
                 for j in range(2000)]
            means.append(np.mean(d))
        assert means[1] / means[0] == pytest.approx(2.0, rel=0.05)

    def test_mask_leaves_other_parameters_bitwise(self, iris_arch):
        w = nd.init_weights(iris_arch, 3)
        mask = nd.random_mask(83, 10, seed=21)
        spec = nd.PerturbationSpec(epsilon=1e-3, count=1, mask=mask, seed=4)
        flat = w.flatten()
        out = nd.perturb(w, spec, 0).flatten()
        untouched = np.setdiff1d(np.arange(83), np.array(mask))
        assert untouched.size == 73
        assert np.array_equal(out[untouched], flat[untouched])
        assert np.all(out[np.array(mask)] != flat[np.array(mask)])

    def test_mask_out_of_range_rejected(self, iris_arch):
        w = nd.init_weights(iris_arch, 3)
        spec = nd.PerturbationSpec(epsilon=1e-3, count=1, mask=(5, 95), seed=4)
        with pytest.raises(ValueError):
            nd.perturb(w, spec, 0)

    def test_member_stream_independence(self, iris_arch):
        # member j depends only on (spec.seed, j), never on the other members
        w = nd.init_weights(iris_arch, 4)
        spec_a = nd.PerturbationSpec(epsilon=1e-8, count=3, seed=7)
        spec_b = nd.PerturbationSpec(epsilon=1e-8, count=20, seed=7)
        for j in range(3):
            assert np.array_equal(nd.perturb(w, spec_a, j).flatten(),
                                  nd.perturb(w, spec_b, j).flatten())

    def test_deterministic(self, iris_arch):
        w = nd.init_weights(iris_arch, 5)
        spec = nd.PerturbationSpec(epsilon=1e-8, count=1, seed=9)
        assert np.array_equal(nd.perturb(w, spec, 2).flatten(),
                              nd.perturb(w, spec, 2).flatten())


class TestRunEnsemble:
    def test_distances_match_snapshot_recomputation_bitwise(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 6)
        spec = nd.PerturbationSpec(epsilon=1e-8, count=3, seed=13)
        res = nd.run_ensemble(iris_arch, w0, spec, nd.GDConfig(0.05, 40), iris_train)
        ref = res.reference.flat_snapshots()
        for j, series in enumerate(res.distances):
            member = res.perturbed[j].flat_snapshots()
            recomputed = np.sum(np.abs(member - ref), axis=1)
            assert np.array_equal(series.values, recomputed)

    def test_mean_is_member_average(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 7)
        spec = nd.PerturbationSpec(epsilon=1e-8, count=4, seed=14)
        res = nd.run_ensemble(iris_arch, w0, spec, nd.GDConfig(0.05, 30), iris_train)
        stacked = np.stack([s.values for s in res.distances])
        assert np.allclose(res.mean_distance.values, stacked.mean(axis=0), atol=0)
        assert np.all(res.live_counts == 4)

    def test_worker_count_does_not_change_bytes(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 8)
        spec = nd.PerturbationSpec(epsilon=1e-8, count=4, seed=15)
        config = nd.GDConfig(0.05, 25)
        serial = nd.run_ensemble(iris_arch, w0, spec, config, iris_train, workers=1)
        pooled = nd.run_ensemble(iris_arch, w0, spec, config, iris_train, workers=2)
        for a, b in zip(serial.distances, pooled.distances):
            assert np.array_equal(a.values, b.values)
        assert np.array_equal(serial.reference.loss_series, pooled.reference.loss_series)

    def test_member_keep_endpoint_truncates_snapshots(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 9)
        spec = nd.PerturbationSpec(epsilon=1e-8, count=2, seed=16)
        res = nd.run_ensemble(iris_arch, w0, spec, nd.GDConfig(0.05, 20), iris_train,
                              member_keep="endpoint")
        assert all(len(t.snapshots) == 1 for t in res.perturbed)
        assert all(len(s.values) == 21 for s in res.distances)

    def test_shared_reference_reused(self, iris_arch, iris_train):
        w0 = nd.init_weights(iris_arch, 10)
        config = nd.GDConfig(0.05, 20)
        reference = nd.train(iris_arch, w0, config, iris_train)
        spec = nd.PerturbationSpec(epsilon=1e-8, count=2, seed=17)
        res = nd.run_ensemble(iris_arch, w0, spec, config, iris_train, reference=reference)
        assert res.reference is reference

    def test_post_training_perturbation_stays_flat(self, iris_arch, iris_train):
        # perturb at a near-converged state: reference loss keeps decreasing
        # and the ensemble distance never blows up
        w0 = nd.init_weights(iris_arch, derive_seed(1, "init", 0))
        warm = nd.train(iris_arch, w0, nd.GDConfig(0.01, 4000, snapshot_stride=4000),
                        iris_train)
        spec = nd.PerturbationSpec(epsilon=1e-8, count=5, seed=18)
        res = nd.run_ensemble(iris_arch, warm.final, spec, nd.GDConfig(0.01, 500),
                              iris_train)
        assert np.max(np.diff(res.reference.loss_series)) <= 1e-12
        change = res.reference.loss_series[0] - res.reference.loss_series[-1]
        assert 0 <= change < 0.15
        d = res.mean_distance.values
        assert np.max(d) < 10 * d[0]

    def test_divergent_members_counted_live(self, iris_arch):
        data = make_dataset(8, 4, 3, seed=20)
        poisoned = nd.Dataset(
            np.where(np.arange(8)[:, None] == 0, np.inf, data.inputs),
            data.targets, data.labels,
        )
        w0 = nd.init_weights(iris_arch, 11)
        spec = nd.PerturbationSpec(epsilon=1e-3, count=3, seed=19)
        res = nd.run_ensemble(iris_arch, w0, spec, nd.GDConfig(0.1, 10), poisoned)
        assert res.reference.diverged_at is not None
        assert np.all(res.live_counts >= 0)
        n_grid = len(res.reference.snapshot_iterations)
        assert all(len(s.values) <= n_grid for s in res.distances)
