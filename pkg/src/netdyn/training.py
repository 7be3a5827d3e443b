"""The gradient-descent map and full training trajectories.

One training step is the deterministic map ``W -> W - eta * grad(W)`` on the
full batch.  Iterating it from an initial parameter state produces a
trajectory: per-iteration loss (and optionally accuracy), both L1 and L2
parameter norms, and parameter snapshots on a configurable stride.  A
non-finite parameter state stops recording and is flagged, never silently
propagated.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .network import Dataset, NetworkArchitecture, WeightSet, accuracy, loss_and_gradient

__all__ = [
    "GDConfig",
    "Trajectory",
    "gd_step",
    "train",
    "save_trajectory",
    "load_trajectory",
    "write_trajectory_csv",
]

_MAGIC = b"NETDYNTRAJ1\n"


@dataclass(frozen=True)
class GDConfig:
    """Learning rate, iteration count and snapshot stride."""

    eta: float
    iterations: int
    snapshot_stride: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")


@dataclass
class Trajectory:
    """One orbit of the training map with its recorded observables.

    ``loss_series[t]`` is the loss at iteration ``t`` (so its length is
    ``iterations + 1`` unless the run diverged, in which case all series
    stop at the last finite state and ``diverged_at`` holds the iteration
    index of the first non-finite one).  ``snapshots`` is an ordered list of
    ``(iteration, WeightSet)`` pairs at the stride grid; iteration 0 and the
    final finite iteration are always included.
    """

    snapshots: list[tuple[int, WeightSet]]
    loss_series: np.ndarray
    weight_norm_l1: np.ndarray
    weight_norm_l2: np.ndarray
    accuracy_train: np.ndarray | None = None
    accuracy_test: np.ndarray | None = None
    diverged_at: int | None = None

    @property
    def iterations(self) -> int:
        """Last recorded iteration index."""
        return len(self.loss_series) - 1

    @property
    def snapshot_iterations(self) -> np.ndarray:
        return np.array([t for t, _ in self.snapshots], dtype=np.int64)

    def snapshot_at(self, iteration: int) -> WeightSet:
        for t, w in self.snapshots:
            if t == iteration:
                return w
        raise KeyError(f"no snapshot recorded at iteration {iteration}")

    @property
    def initial(self) -> WeightSet:
        return self.snapshots[0][1]

    @property
    def final(self) -> WeightSet:
        return self.snapshots[-1][1]

    def flat_snapshots(self) -> np.ndarray:
        """Snapshots stacked as a (n_snapshots, n_params) matrix."""
        return np.stack([w.flatten() for _, w in self.snapshots])

    def parameter_series(self, param_index: int) -> np.ndarray:
        """Scalar trajectory of one parameter across the snapshot grid."""
        return np.array([w.flatten()[param_index] for _, w in self.snapshots])


def gd_step(arch: NetworkArchitecture, w: WeightSet, eta: float, data: Dataset) -> WeightSet:
    """One full-batch gradient step ``W - eta * grad``.

    A non-finite result is returned as-is; callers detect it with
    ``WeightSet.all_finite`` (``train`` records it as a divergence).
    """
    _, g = loss_and_gradient(arch, w, data)
    return WeightSet(
        [wl - eta * gl for wl, gl in zip(w.weights, g.weights)],
        [bl - eta * gl for bl, gl in zip(w.biases, g.biases)],
    )


def _norms(w: WeightSet) -> tuple[float, float]:
    flat = w.flatten()
    # linalg.norm rescales internally, so huge weights cannot overflow it
    return float(np.sum(np.abs(flat))), float(np.linalg.norm(flat))


def train(
    arch: NetworkArchitecture,
    w0: WeightSet,
    config: GDConfig,
    data: Dataset,
    eval_data: Dataset | None = None,
    record_accuracy: bool = False,
    snapshot_observer=None,
) -> Trajectory:
    """Iterate the training map ``config.iterations`` times from ``w0``.

    Loss and parameter norms are recorded at every iteration regardless of
    the snapshot stride.  ``snapshot_observer(iteration, weight_set)``, when
    given, is called at exactly the recorded snapshot points (it must not
    mutate its argument).  Identical inputs give bit-identical trajectories.
    """
    if not w0.matches(arch):
        raise ValueError("initial weights do not match architecture")
    stride = config.snapshot_stride
    t_final = config.iterations

    losses, l1s, l2s, acc_tr, acc_te = [], [], [], [], []
    snapshots: list[tuple[int, WeightSet]] = []
    diverged_at = None

    w = w0.copy()
    t = 0
    while True:
        value, grad = loss_and_gradient(arch, w, data)
        losses.append(value)
        n1, n2 = _norms(w)
        l1s.append(n1)
        l2s.append(n2)
        if record_accuracy:
            acc_tr.append(accuracy(arch, w, data))
            if eval_data is not None:
                acc_te.append(accuracy(arch, w, eval_data))
        if t % stride == 0 or t == t_final:
            snapshots.append((t, w))
            if snapshot_observer is not None:
                snapshot_observer(t, w)
        if t == t_final:
            break
        w_next = WeightSet(
            [wl - config.eta * gl for wl, gl in zip(w.weights, grad.weights)],
            [bl - config.eta * gl for bl, gl in zip(w.biases, grad.biases)],
        )
        if not w_next.all_finite():
            diverged_at = t + 1
            if snapshots[-1][0] != t:  # keep the last finite state
                snapshots.append((t, w))
                if snapshot_observer is not None:
                    snapshot_observer(t, w)
            break
        w = w_next
        t += 1

    return Trajectory(
        snapshots=snapshots,
        loss_series=np.array(losses),
        weight_norm_l1=np.array(l1s),
        weight_norm_l2=np.array(l2s),
        accuracy_train=np.array(acc_tr) if record_accuracy else None,
        accuracy_test=np.array(acc_te) if record_accuracy and eval_data is not None else None,
        diverged_at=diverged_at,
    )


def save_trajectory(
    path,
    traj: Trajectory,
    arch: NetworkArchitecture,
    config: GDConfig,
    seed: int | None = None,
) -> None:
    """Write snapshots to the binary trajectory container.

    Layout: magic line, big-endian u32 header length, UTF-8 JSON header
    (arch, eta, iterations, stride, seed, n_params, n_frames, diverged_at),
    then per frame a little-endian u64 iteration index followed by the
    flattened parameters as little-endian float64.
    """
    frames = traj.flat_snapshots()
    header = {
        "layer_sizes": list(arch.layer_sizes),
        "activation": arch.activation,
        "eta": config.eta,
        "iterations": config.iterations,
        "snapshot_stride": config.snapshot_stride,
        "seed": seed,
        "n_params": arch.n_params,
        "n_frames": len(traj.snapshots),
        "diverged_at": traj.diverged_at,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(">I", len(blob)))
        fh.write(blob)
        for (t, _), row in zip(traj.snapshots, frames):
            fh.write(struct.pack("<Q", t))
            fh.write(row.astype("<f8").tobytes())


def load_trajectory(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Read the binary container; returns (header, iterations, flat frames)."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a trajectory container")
        (hlen,) = struct.unpack(">I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        n, p = header["n_frames"], header["n_params"]
        iters = np.empty(n, dtype=np.int64)
        frames = np.empty((n, p))
        for i in range(n):
            raw = fh.read(8 + 8 * p)
            if len(raw) != 8 + 8 * p:
                raise ValueError(f"{path}: truncated frame {i}")
            (iters[i],) = struct.unpack("<Q", raw[:8])
            frames[i] = np.frombuffer(raw[8:], dtype="<f8")
    return header, iters, frames


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Per-iteration scalar series as CSV.

    Columns: iteration, loss, accuracy_train, accuracy_test,
    weight_norm_l1, weight_norm_l2 (accuracy cells empty when not recorded).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "loss", "accuracy_train", "accuracy_test", "weight_norm_l1", "weight_norm_l2"]
        )
        for t in range(len(traj.loss_series)):
            writer.writerow(
                [
                    t,
                    repr(float(traj.loss_series[t])),
                    repr(float(traj.accuracy_train[t])) if traj.accuracy_train is not None else "",
                    repr(float(traj.accuracy_test[t])) if traj.accuracy_test is not None else "",
                    repr(float(traj.weight_norm_l1[t])),
                    repr(float(traj.weight_norm_l2[t])),
                ]
            )
