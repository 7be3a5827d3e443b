import numpy as np
import pytest

import netdyn as nd
from netdyn.datasets import write_idx_pair
from netdyn.rng import derive_seed, gaussian, stream

IRIS_PATH = "data/iris.csv"


def make_dataset(n_samples, n_features, n_classes, seed=0):
    """Random unit-scale classification data for oracle tests."""
    rng = stream(seed)
    inputs = gaussian(rng, n_samples * n_features).reshape(n_samples, n_features)
    labels = (rng.random(n_samples) * n_classes).astype(np.int64)
    targets = np.zeros((n_samples, n_classes))
    targets[np.arange(n_samples), labels] = 1.0
    return nd.Dataset(inputs, targets, labels)


def balanced_two_class(n_per_class=4, n_features=3, seed=0):
    """Dataset whose all-zero weight state is an exact critical point."""
    rng = stream(seed)
    inputs = gaussian(rng, 2 * n_per_class * n_features).reshape(-1, n_features)
    labels = np.array([0] * n_per_class + [1] * n_per_class)
    targets = np.zeros((2 * n_per_class, 2))
    targets[np.arange(2 * n_per_class), labels] = 1.0
    return nd.Dataset(inputs, targets, labels)


@pytest.fixture(scope="session")
def iris_full():
    return nd.load_iris(IRIS_PATH)


@pytest.fixture(scope="session")
def iris_split(iris_full):
    return nd.split(iris_full, nd.SplitSpec(120, 30, seed=derive_seed(0, "split", 0)))


@pytest.fixture(scope="session")
def iris_train(iris_split):
    return iris_split[0]


@pytest.fixture(scope="session")
def iris_arch():
    return nd.NetworkArchitecture((4, 10, 3))


@pytest.fixture(scope="session")
def idx_fixture_pair(tmp_path_factory):
    """A tiny deterministic IDX image/label pair (40 samples)."""
    root = tmp_path_factory.mktemp("idx")
    rng = stream(derive_seed(7, "idx-fixture", 0))
    pixels = (rng.random((40, 784)) * 255).astype(np.uint8)
    labels = (rng.random(40) * 10).astype(np.uint8)
    images_path = root / "images.idx3"
    labels_path = root / "labels.idx1"
    write_idx_pair(images_path, labels_path, pixels, labels)
    return images_path, labels_path, pixels, labels
