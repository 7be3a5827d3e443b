"""Dataset loading, splitting and optional preprocessing.

Two sources are supported: generic CSV classification tables (numeric
feature columns with the label last, header optional) and the big-endian
IDX image/label container pair.  Everything is parsed in-repo; files are
user-supplied paths.  A small writer for the IDX pair is included so tests
and demo scripts can build fixture files deterministically.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .network import Dataset
from .rng import stream

__all__ = [
    "SplitSpec",
    "load_iris",
    "load_csv",
    "load_mnist_idx",
    "write_idx_pair",
    "split",
    "standardize",
]

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class SplitSpec:
    """Train/test sizes, seed and stratification flag."""

    n_train: int
    n_test: int
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("need n_train >= 1 and n_test >= 0")


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def load_csv(path) -> Dataset:
    """Classification table: numeric feature columns, label in the last column.

    A single header row is tolerated.  String labels are mapped to class
    indices in sorted order (so are integer labels that do not already form
    a dense 0..k-1 range).  Malformed rows raise with their line number.
    """
    rows, raw_labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise ValueError(f"{path}:{lineno}: need at least one feature and a label")
                try:
                    [float(c) for c in row[:-1]]
                except ValueError:
                    continue  # header row
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row[:-1]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric feature value") from exc
            raw_labels.append(row[-1].strip())
    if not rows:
        raise ValueError(f"{path}: no data rows")
    classes = sorted(set(raw_labels))
    mapping = {c: i for i, c in enumerate(classes)}
    labels = np.array([mapping[c] for c in raw_labels], dtype=np.int64)
    return Dataset(np.array(rows), _one_hot(labels, len(classes)), labels)


def load_iris(path) -> Dataset:
    """Load the 150-sample, 4-feature, 3-class flower table from CSV.

    Any CSV honoring the same shape contract is accepted; the canonical
    file gives (150, 4, 3).
    """
    return load_csv(path)


def _read_idx_header(fh, path, expected_magic, n_dims):
    raw = fh.read(4 * (1 + n_dims))
    if len(raw) != 4 * (1 + n_dims):
        raise ValueError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + n_dims}I", raw)
    if fields[0] != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{expected_magic:08x}"
        )
    return fields[1:]


def load_mnist_idx(
    images_path, labels_path, subset_size: int | None = None, seed: int = 0,
    n_classes: int = 10,
) -> Dataset:
    """Parse a big-endian IDX image/label pair into a flat-pixel dataset.

    Pixels are scaled to [0, 1] by /255.  When ``subset_size`` is given, a
    seeded subset is drawn without replacement (indices kept in ascending
    order).
    """
    with open(images_path, "rb") as fh:
        n_images, rows, cols = _read_idx_header(fh, images_path, _IDX_IMAGES_MAGIC, 3)
        payload = fh.read()
    expected = n_images * rows * cols
    if len(payload) != expected:
        raise ValueError(f"{images_path}: expected {expected} pixel bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n_images, rows * cols)

    with open(labels_path, "rb") as fh:
        (n_labels,) = _read_idx_header(fh, labels_path, _IDX_LABELS_MAGIC, 1)
        raw = fh.read()
    if len(raw) != n_labels:
        raise ValueError(f"{labels_path}: expected {n_labels} label bytes, got {len(raw)}")
    if n_labels != n_images:
        raise ValueError(f"image count {n_images} != label count {n_labels}")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if labels.max(initial=0) >= n_classes:
        raise ValueError(f"{labels_path}: label {labels.max()} outside 0..{n_classes - 1}")

    if subset_size is not None:
        if not 1 <= subset_size <= n_images:
            raise ValueError(f"subset_size {subset_size} out of range 1..{n_images}")
        rng = stream(seed)
        idx = np.sort(rng.choice(n_images, size=subset_size, replace=False))
        pixels, labels = pixels[idx], labels[idx]
    inputs = pixels.astype(np.float64) / 255.0
    return Dataset(inputs, _one_hot(labels, n_classes), labels)


def write_idx_pair(images_path, labels_path, pixels: np.ndarray, labels: np.ndarray,
                   rows: int = 28, cols: int = 28) -> None:
    """Write uint8 image rows (n, rows*cols) and labels (n,) as an IDX pair."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n = pixels.shape[0]
    if pixels.shape != (n, rows * cols) or labels.shape != (n,):
        raise ValueError("pixels must be (n, rows*cols) uint8 and labels (n,)")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", _IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", _IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes())


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset | None]:
    """Disjoint seeded train/test split, optionally stratified by class.

    Stratified splits apportion per-class counts by largest remainder, so
    class proportions are preserved to within one sample.  Selected indices
    are kept in ascending original order.  Returns (train, test); test is
    None when ``n_test`` is 0.
    """
    n = data.n_samples
    if spec.n_train + spec.n_test > n:
        raise ValueError(f"split sizes {spec.n_train}+{spec.n_test} exceed {n} samples")
    rng = stream(spec.seed)
    if not spec.stratified:
        perm = rng.permutation(n)
        train_idx = np.sort(perm[: spec.n_train])
        test_idx = np.sort(perm[spec.n_train : spec.n_train + spec.n_test])
    else:
        train_parts, test_parts = [], []
        classes, counts = np.unique(data.labels, return_counts=True)
        tr_counts = _apportion(counts, spec.n_train)
        te_counts = _apportion(counts, spec.n_test)
        for cls, n_tr, n_te, n_cls in zip(classes, tr_counts, te_counts, counts):
            if n_tr + n_te > n_cls:
                raise ValueError(
                    f"class {cls}: cannot draw {n_tr}+{n_te} from {n_cls} samples"
                )
            members = np.nonzero(data.labels == cls)[0]
            perm = members[rng.permutation(members.size)]
            train_parts.append(perm[:n_tr])
            test_parts.append(perm[n_tr : n_tr + n_te])
        train_idx = np.sort(np.concatenate(train_parts))
        test_idx = np.sort(np.concatenate(test_parts))

    def take(idx):
        return Dataset(data.inputs[idx], data.targets[idx], data.labels[idx])

    return take(train_idx), (take(test_idx) if spec.n_test > 0 else None)


def _apportion(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` across class counts."""
    quota = counts * total / counts.sum()
    base = np.floor(quota).astype(np.int64)
    remainder = total - base.sum()
    if remainder > 0:
        order = np.argsort(-(quota - base), kind="stable")
        base[order[:remainder]] += 1
    return base


def standardize(
    train: Dataset, test: Dataset | None = None
) -> tuple[Dataset, Dataset | None, np.ndarray, np.ndarray]:
    """Z-score features using TRAIN statistics; the same transform maps test.

    Zero-variance features pass through unchanged with a warning.  Returns
    (train, test, means, stds).
    """
    means = train.inputs.mean(axis=0)
    stds = train.inputs.std(axis=0)
    flat = stds == 0.0
    if flat.any():
        warnings.warn(
            f"{int(flat.sum())} zero-variance feature(s) left unstandardized",
            stacklevel=2,
        )
    scale = np.where(flat, 1.0, stds)
    shift = np.where(flat, 0.0, means)

    def transform(d: Dataset) -> Dataset:
        return Dataset((d.inputs - shift) / scale, d.targets, d.labels)

    return transform(train), (transform(test) if test is not None else None), means, stds
