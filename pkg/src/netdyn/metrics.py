"""Network-space distance and per-weight trajectory diagnostics.

The distance between two parameter states is the L1 norm of their
element-wise difference over all parameters, biases included.  Per-weight
diagnostics summarize a single trajectory: relative endpoint displacement,
total path length (rectified trajectory), and single-parameter ablation
importance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .network import Dataset, NetworkArchitecture, WeightSet, loss, param_coords
from .training import Trajectory

__all__ = [
    "DistanceSeries",
    "WeightDiagnostics",
    "l1_distance",
    "displacement",
    "path_length",
    "ablation_importance",
    "weight_diagnostics",
    "drift_quadrant_count",
    "write_weight_diag_csv",
]

# |w(0)| below this is treated as zero and the relative displacement is
# undefined (biases start at exactly 0).
ZERO_THRESHOLD = 1e-12


@dataclass
class DistanceSeries:
    """d(t) between a reference and one perturbed trajectory."""

    iterations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.iterations = np.asarray(self.iterations, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.iterations.shape != self.values.shape:
            raise ValueError("iterations and values must have equal length")

    def value_at(self, iteration: int) -> float:
        idx = np.nonzero(self.iterations == iteration)[0]
        if idx.size == 0:
            raise KeyError(f"no distance recorded at iteration {iteration}")
        return float(self.values[idx[0]])


def l1_distance(w: WeightSet, w_other: WeightSet) -> float:
    """Sum of absolute element-wise parameter differences."""
    a, b = w.flatten(), w_other.flatten()
    if a.shape != b.shape:
        raise ValueError("weight sets have different parameter counts")
    return float(np.sum(np.abs(a - b)))


def displacement(traj: Trajectory, param_index: int) -> float | None:
    """Relative endpoint displacement |w(T) - w(0)| / |w(0)|.

    Returns None when |w(0)| is below the zero threshold (the quantity is
    undefined there; bias weights start at exactly zero).
    """
    if len(traj.snapshots) < 2:
        raise ValueError("trajectory needs at least two snapshots")
    series = traj.parameter_series(param_index)
    w0, wt = series[0], series[-1]
    if abs(w0) < ZERO_THRESHOLD:
        return None
    return abs(wt - w0) / abs(w0)


def path_length(traj: Trajectory, param_index: int) -> float:
    """Total variation of one parameter over the full-resolution trajectory.

    Requires stride-1 snapshots; coarser recording would underestimate the
    rectified length.  Summation uses math.fsum so the triangle inequality
    against the endpoint displacement holds even for monotone series.
    """
    _require_unit_stride(traj)
    series = traj.parameter_series(param_index)
    return math.fsum(np.abs(np.diff(series)))


def _require_unit_stride(traj: Trajectory):
    iters = traj.snapshot_iterations
    if len(iters) < 2 or not np.all(np.diff(iters) == 1):
        raise ValueError("per-weight path length needs snapshot_stride == 1")


def ablation_importance(arch: NetworkArchitecture, w: WeightSet, data: Dataset) -> np.ndarray:
    """Loss change from zeroing each parameter individually.

    Entry p is ``loss(W with parameter p set to 0) - loss(W)``; the weight
    set is restored bitwise after every probe.
    """
    flat = w.flatten()
    baseline = loss(arch, w, data)
    out = np.empty(flat.size)
    probe = WeightSet.unflatten(arch, flat)
    probe_flat_views = _flat_views(arch, probe)
    for p in range(flat.size):
        arr, off = probe_flat_views[p]
        old = arr.flat[off]
        if old == 0.0:
            out[p] = 0.0
            continue
        arr.flat[off] = 0.0
        out[p] = loss(arch, probe, data) - baseline
        arr.flat[off] = old
    return out


def _flat_views(arch: NetworkArchitecture, w: WeightSet) -> list[tuple[np.ndarray, int]]:
    """(array, flat offset) per canonical parameter index."""
    views = []
    for wl, bl in zip(w.weights, w.biases):
        views.extend((wl, i) for i in range(wl.size))
        views.extend((bl, i) for i in range(bl.size))
    return views


@dataclass
class WeightDiagnostics:
    """Per-parameter trajectory summary for one training run.

    ``delta_w`` is NaN where undefined (initial value at zero); the
    companion mask ``delta_defined`` makes that explicit.
    """

    coords: np.ndarray  # structured (layer, row, col, is_bias)
    w_initial: np.ndarray
    w_final: np.ndarray
    delta_w: np.ndarray
    delta_defined: np.ndarray
    d_w: np.ndarray
    ablation_delta: np.ndarray
    baseline_loss: float


def weight_diagnostics(
    arch: NetworkArchitecture, traj: Trajectory, data: Dataset
) -> WeightDiagnostics:
    """Displacement, path length and ablation importance for every parameter."""
    _require_unit_stride(traj)
    frames = traj.flat_snapshots()
    w0, wt = frames[0], frames[-1]
    defined = np.abs(w0) >= ZERO_THRESHOLD
    delta = np.full(arch.n_params, np.nan)
    delta[defined] = np.abs(wt[defined] - w0[defined]) / np.abs(w0[defined])
    steps = np.abs(np.diff(frames, axis=0))
    d_w = np.array([math.fsum(steps[:, p]) for p in range(arch.n_params)])
    final = traj.final
    return WeightDiagnostics(
        coords=param_coords(arch),
        w_initial=w0,
        w_final=wt,
        delta_w=delta,
        delta_defined=defined,
        d_w=d_w,
        ablation_delta=ablation_importance(arch, final, data),
        baseline_loss=loss(arch, final, data),
    )


def drift_quadrant_count(diag: WeightDiagnostics) -> int:
    """Parameters with small displacement but large path length.

    Counts defined parameters with ``delta_w`` below its first quartile and
    ``d_w`` above its 90th percentile (quantiles over defined parameters
    only).  An empty quadrant argues against neutral random-walk drift.
    """
    delta = diag.delta_w[diag.delta_defined]
    d_w = diag.d_w[diag.delta_defined]
    if delta.size == 0:
        return 0
    q25 = np.percentile(delta, 25)
    q90 = np.percentile(d_w, 90)
    return int(np.sum((delta < q25) & (d_w > q90)))


def write_weight_diag_csv(path, diag: WeightDiagnostics) -> None:
    """Per-parameter diagnostics table.

    Columns: param_index, layer, row, col, is_bias, w0, wT, delta_w, d_w,
    ablation_delta, ablation_ratio (delta_w empty where undefined;
    ablation_ratio is the loss change relative to the baseline loss).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["param_index", "layer", "row", "col", "is_bias", "w0", "wT",
             "delta_w", "d_w", "ablation_delta", "ablation_ratio"]
        )
        for p in range(diag.w_initial.size):
            c = diag.coords[p]
            writer.writerow(
                [
                    p,
                    int(c["layer"]),
                    int(c["row"]),
                    int(c["col"]),
                    int(c["is_bias"]),
                    repr(float(diag.w_initial[p])),
                    repr(float(diag.w_final[p])),
                    repr(float(diag.delta_w[p])) if diag.delta_defined[p] else "",
                    repr(float(diag.d_w[p])),
                    repr(float(diag.ablation_delta[p])),
                    repr(float(diag.ablation_delta[p] / diag.baseline_loss)),
                ]
            )
