"""Perturbed initial conditions and reference/perturbed ensemble runs.

A perturbation adds independent Uniform(-epsilon, epsilon) offsets to every
parameter (or to a masked subset of flattened indices).  Ensemble members
are trained with the exact same configuration and data as the reference,
and the L1 distance to the reference is recorded at every snapshot
iteration.  Member j's random stream depends only on (spec.seed, j), so
adding or removing other members never changes member j.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .metrics import DistanceSeries
from .network import Dataset, NetworkArchitecture, WeightSet
from .parallel import run_indexed
from .rng import derive_seed, stream, uniform_symmetric
from .training import GDConfig, Trajectory, train

__all__ = ["PerturbationSpec", "EnsembleResult", "perturb", "run_ensemble",
           "random_mask", "write_distances_csv"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerturbationSpec:
    """Radius, member count, optional index mask and master seed.

    ``mask=None`` perturbs all parameters including biases; an explicit
    mask lists flattened parameter indices.  An empty mask is rejected.
    """

    epsilon: float
    count: int
    mask: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.mask is not None:
            mask = tuple(sorted(int(i) for i in self.mask))
            if len(mask) == 0:
                raise ValueError("empty mask is forbidden; use mask=None for all parameters")
            if len(set(mask)) != len(mask) or mask[0] < 0:
                raise ValueError("mask indices must be unique and nonnegative")
            object.__setattr__(self, "mask", mask)


def random_mask(n_params: int, size: int, seed: int) -> tuple[int, ...]:
    """Choose ``size`` flattened indices uniformly without replacement."""
    if not 1 <= size <= n_params:
        raise ValueError("mask size out of range")
    rng = stream(seed)
    return tuple(sorted(rng.choice(n_params, size=size, replace=False).tolist()))


def perturb(w: WeightSet, spec: PerturbationSpec, member_index: int) -> WeightSet:
    """Member ``member_index`` of the epsilon-hypercube around ``w``.

    Draws one uniform per masked parameter from the stream keyed by
    (spec.seed, member_index), in ascending index order.  At radii near
    1e-14 some offsets are absorbed by rounding against O(1) weights; the
    absorbed count is logged and only the aggregate displacement is
    meaningful.
    """
    flat = w.flatten()
    if spec.mask is None:
        idx = np.arange(flat.size)
    else:
        idx = np.asarray(spec.mask, dtype=np.int64)
        if idx[-1] >= flat.size:
            raise ValueError("mask index beyond parameter count")
    rng = stream(derive_seed(spec.seed, "perturb", member_index))
    delta = uniform_symmetric(rng, idx.size, spec.epsilon)
    out = flat.copy()
    out[idx] = out[idx] + delta
    absorbed = int(np.sum(out[idx] == flat[idx]))
    if absorbed:
        logger.debug(
            "perturb member %d: %d of %d offsets absorbed by rounding",
            member_index, absorbed, idx.size,
        )
    return WeightSet.unflatten(_arch_of(w), out)


def _arch_of(w: WeightSet) -> NetworkArchitecture:
    sizes = [w.weights[0].shape[1]] + [wl.shape[0] for wl in w.weights]
    return NetworkArchitecture(tuple(sizes))


@dataclass
class EnsembleResult:
    """Reference trajectory, its perturbed companions and their distances.

    ``distances[j]`` is the L1 distance series of member j against the
    reference on the shared snapshot grid.  ``mean_distance`` averages
    pointwise over the members still finite at each iteration;
    ``live_counts`` records how many that is.
    """

    reference: Trajectory
    perturbed: list[Trajectory]
    distances: list[DistanceSeries]
    mean_distance: DistanceSeries
    live_counts: np.ndarray


def _train_member(ctx, j: int):
    (arch, w0_flat, spec, config, data, eval_data, ref_frames, ref_iters, keep) = ctx
    w0 = WeightSet.unflatten(arch, w0_flat)
    wj = perturb(w0, spec, j)
    d0 = float(np.sum(np.abs(wj.flatten() - w0_flat)))
    if d0 == 0.0:
        raise ValueError(
            f"degenerate perturbation: member {j} coincides with the reference "
            f"(epsilon={spec.epsilon})"
        )
    traj = train(arch, wj, config, data, eval_data)
    frames = traj.flat_snapshots()
    n = min(len(frames), len(ref_frames))
    dist = np.sum(np.abs(frames[:n] - ref_frames[:n]), axis=1)
    if keep == "endpoint":
        traj.snapshots = [traj.snapshots[-1]]
    return traj, DistanceSeries(ref_iters[:n], dist)


def run_ensemble(
    arch: NetworkArchitecture,
    w0: WeightSet,
    spec: PerturbationSpec,
    gd_config: GDConfig,
    data: Dataset,
    eval_data: Dataset | None = None,
    reference: Trajectory | None = None,
    member_keep: str = "all",
    workers: int = 1,
) -> EnsembleResult:
    """Train the reference and ``spec.count`` perturbed members.

    All trajectories share ``gd_config`` and ``data``.  A precomputed
    ``reference`` trajectory (from the same ``w0`` and config) can be
    reused across ensembles.  ``member_keep="endpoint"`` drops member
    snapshots after distances are computed, which bounds memory for large
    networks.  Results are independent of ``workers``.
    """
    if member_keep not in ("all", "endpoint"):
        raise ValueError("member_keep must be 'all' or 'endpoint'")
    if reference is None:
        reference = train(arch, w0, gd_config, data, eval_data)
    ref_frames = reference.flat_snapshots()
    ref_iters = reference.snapshot_iterations
    ctx = (arch, w0.flatten(), spec, gd_config, data, eval_data, ref_frames, ref_iters, member_keep)
    results = run_indexed(_train_member, spec.count, ctx, workers)
    perturbed = [r[0] for r in results]
    distances = [r[1] for r in results]

    n_grid = len(ref_iters)
    live = np.zeros(n_grid, dtype=np.int64)
    total = np.zeros(n_grid)
    for series in distances:
        k = len(series.values)
        live[:k] += 1
        total[:k] += series.values
    with np.errstate(invalid="ignore"):
        mean = np.where(live > 0, total / np.maximum(live, 1), np.nan)
    return EnsembleResult(
        reference=reference,
        perturbed=perturbed,
        distances=distances,
        mean_distance=DistanceSeries(ref_iters, mean),
        live_counts=live,
    )


def write_distances_csv(path, result: EnsembleResult) -> None:
    """Distance table: (iteration, member_id, distance, loss_reference,
    loss_member); the ensemble mean appears with member_id = -1."""
    ref_loss = result.reference.loss_series
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "member_id", "distance", "loss_reference", "loss_member"])
        for j, series in enumerate(result.distances):
            member_loss = result.perturbed[j].loss_series
            for t, d in zip(series.iterations, series.values):
                writer.writerow(
                    [
                        int(t),
                        j,
                        repr(float(d)),
                        repr(float(ref_loss[t])) if t < len(ref_loss) else "",
                        repr(float(member_loss[t])) if t < len(member_loss) else "",
                    ]
                )
        for t, d in zip(result.mean_distance.iterations, result.mean_distance.values):
            writer.writerow(
                [
                    int(t),
                    -1,
                    repr(float(d)),
                    repr(float(ref_loss[t])) if t < len(ref_loss) else "",
                    "",
                ]
            )
