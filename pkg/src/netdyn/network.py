"""Feed-forward network core: architecture, parameter state, loss and gradients.

The network is a fully-connected MLP with a sigmoid nonlinearity at every
layer, output included (no softmax).  The loss is the cross-entropy of the
one-hot targets against the raw sigmoid outputs, taken per output unit and
summed: each unit contributes its Bernoulli cross-entropy term, so the true
class is pushed toward 1 while the other outputs are pushed toward 0.

Parameter state is a :class:`WeightSet`.  Its canonical flattening order is
fixed: layers in order (first hidden to output), and within each layer the
weight matrix in row-major order followed by that layer's bias vector.
Every seed-dependent or index-based operation in the package (perturbation
masks, per-weight diagnostics, serialization) refers to this order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .rng import gaussian, stream

__all__ = [
    "NetworkArchitecture",
    "WeightSet",
    "Dataset",
    "init_weights",
    "forward",
    "loss",
    "gradient",
    "loss_and_gradient",
    "accuracy",
    "param_coords",
]

# Outputs are clamped to this range inside the log only; the sigmoid itself
# is never altered.  Keeps the loss finite if a unit saturates to 0/1 in
# double precision.
CLAMP = 1e-12


@dataclass(frozen=True)
class NetworkArchitecture:
    """Layer sizes from input to output, e.g. ``(4, 10, 3)``."""

    layer_sizes: tuple[int, ...]
    activation: str = "sigmoid"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("need at least input, one hidden and output layer")
        if any(n < 1 for n in sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.activation != "sigmoid":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        """Total trainable parameter count (weights + biases)."""
        sizes = self.layer_sizes
        return sum(n * m + n for m, n in zip(sizes[:-1], sizes[1:]))


@dataclass
class WeightSet:
    """All trainable parameters: per-layer weight matrices and bias vectors.

    ``weights[k]`` has shape ``(n_{k+1}, n_k)`` and ``biases[k]`` has length
    ``n_{k+1}`` for layer sizes ``(n_0, ..., n_L)``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "WeightSet":
        return WeightSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        """Canonical 1-D view: per layer, row-major weights then biases."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )

    def matches(self, arch: NetworkArchitecture) -> bool:
        sizes = arch.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            return False
        for k, (m, n) in enumerate(zip(sizes[:-1], sizes[1:])):
            if self.weights[k].shape != (n, m) or self.biases[k].shape != (n,):
                return False
        return True


def unflatten(arch: NetworkArchitecture, vec: np.ndarray) -> WeightSet:
    """Inverse of :meth:`WeightSet.flatten` for the given architecture."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (arch.n_params,):
        raise ValueError(f"expected {arch.n_params} parameters, got {vec.shape}")
    weights, biases, pos = [], [], 0
    sizes = arch.layer_sizes
    for m, n in zip(sizes[:-1], sizes[1:]):
        weights.append(vec[pos : pos + n * m].reshape(n, m).copy())
        pos += n * m
        biases.append(vec[pos : pos + n].copy())
        pos += n
    return WeightSet(weights, biases)


# attach as a classmethod-style helper for symmetry with flatten()
WeightSet.unflatten = staticmethod(unflatten)


@dataclass
class Dataset:
    """Classification samples: inputs, one-hot targets and integer labels."""

    inputs: np.ndarray  # (N, n_features)
    targets: np.ndarray  # (N, n_classes) one-hot
    labels: np.ndarray = field(default=None)  # (N,) ints

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.labels is None:
            self.labels = np.argmax(self.targets, axis=1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ValueError("inputs and targets must be 2-D")
        n = self.inputs.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.targets.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("inputs, targets and labels disagree on sample count")
        rows = np.sum(self.targets, axis=1)
        if not np.all(rows == 1.0):
            raise ValueError("targets must be one-hot (each row sums to exactly 1)")
        if not np.array_equal(np.argmax(self.targets, axis=1), self.labels):
            raise ValueError("labels inconsistent with one-hot targets")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_classes(self) -> int:
        return self.targets.shape[1]


def init_weights(arch: NetworkArchitecture, rng_seed: int) -> WeightSet:
    """Standard-Gaussian weights, zero biases, reproducible from ``rng_seed``.

    Draw order is the canonical flattening order of the weight matrices
    (biases consume no randomness).
    """
    rng = stream(rng_seed)
    weights, biases = [], []
    sizes = arch.layer_sizes
    for m, n in zip(sizes[:-1], sizes[1:]):
        weights.append(gaussian(rng, n * m).reshape(n, m))
        biases.append(np.zeros(n))
    return WeightSet(weights, biases)


def _check_pair(arch: NetworkArchitecture, w: WeightSet):
    if not w.matches(arch):
        raise ValueError("weight set does not match architecture shapes")


def _activations(w: WeightSet, x: np.ndarray) -> list[np.ndarray]:
    """Per-layer outputs for a batch ``x`` of shape (N, n_inputs)."""
    acts = [x]
    a = x
    for wl, bl in zip(w.weights, w.biases):
        a = expit(a @ wl.T + bl)
        acts.append(a)
    return acts


def forward(arch: NetworkArchitecture, w: WeightSet, x: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a batch of row vectors.

    Every component lies in (0, 1) since the output layer is sigmoid.
    """
    _check_pair(arch, w)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != arch.n_inputs:
        raise ValueError(f"input width {x.shape[1]} != architecture input {arch.n_inputs}")
    out = _activations(w, x)[-1]
    return out[0] if single else out


def _ce_value(out: np.ndarray, targets: np.ndarray) -> float:
    p = np.clip(out, CLAMP, 1.0 - CLAMP)
    per_unit = targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)
    return float(-np.mean(np.sum(per_unit, axis=1)))


def loss(arch: NetworkArchitecture, w: WeightSet, data: Dataset) -> float:
    """Per-unit cross-entropy against the raw sigmoid outputs.

    ``-mean_i sum_k [y_ik log F_k(x_i) + (1 - y_ik) log(1 - F_k(x_i))]``
    with the output clamped to ``[1e-12, 1 - 1e-12]`` inside the logs.
    """
    _check_pair(arch, w)
    out = _activations(w, data.inputs)[-1]
    return _ce_value(out, data.targets)


def loss_and_gradient(
    arch: NetworkArchitecture, w: WeightSet, data: Dataset
) -> tuple[float, WeightSet]:
    """One fused forward/backward pass; returns (loss, gradient)."""
    _check_pair(arch, w)
    if data.n_features != arch.n_inputs or data.n_classes != arch.n_outputs:
        raise ValueError("dataset shape does not match architecture")
    acts = _activations(w, data.inputs)
    out = acts[-1]
    value = _ce_value(out, data.targets)

    # For sigmoid units under the per-unit cross-entropy, dL/dz collapses
    # to (a - y); it is bounded, so saturation never blows up the gradient.
    delta = (out - data.targets) / data.n_samples

    g_w = [None] * len(w.weights)
    g_b = [None] * len(w.biases)
    for k in range(len(w.weights) - 1, -1, -1):
        g_w[k] = delta.T @ acts[k]
        g_b[k] = delta.sum(axis=0)
        if k > 0:
            a = acts[k]
            delta = (delta @ w.weights[k]) * a * (1.0 - a)
    return value, WeightSet(g_w, g_b)


def gradient(arch: NetworkArchitecture, w: WeightSet, data: Dataset) -> WeightSet:
    """Analytic full-batch gradient of :func:`loss` via backpropagation."""
    return loss_and_gradient(arch, w, data)[1]


def accuracy(arch: NetworkArchitecture, w: WeightSet, data: Dataset) -> float:
    """Fraction of samples whose argmax output matches the label.

    Ties resolve to the lowest class index.
    """
    _check_pair(arch, w)
    out = _activations(w, data.inputs)[-1]
    return float(np.mean(np.argmax(out, axis=1) == data.labels))


def param_coords(arch: NetworkArchitecture) -> np.ndarray:
    """Structured (layer, row, col, is_bias) record per flattened index.

    ``layer`` counts trainable layers from 1; for biases ``col`` is -1.
    """
    recs = np.empty(
        arch.n_params,
        dtype=[("layer", "i4"), ("row", "i4"), ("col", "i4"), ("is_bias", "?")],
    )
    pos = 0
    sizes = arch.layer_sizes
    for k, (m, n) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        r, c = np.divmod(np.arange(n * m), m)
        recs[pos : pos + n * m] = list(zip([k] * (n * m), r, c, [False] * (n * m)))
        pos += n * m
        recs[pos : pos + n] = list(zip([k] * n, range(n), [-1] * n, [True] * n))
        pos += n
    return recs
