"""Finite network Lyapunov exponents from perturbation-ensemble distances.

The finite exponent over a horizon tau averages member distances FIRST and
takes the log ratio afterwards:

    Lambda = (1/tau) * ln( mean_j d_j(tau) / mean_j d_j(0) )

tau is the saturation time, found automatically as the end of the window
where ln of the ensemble-mean distance is best fit by a straight line.
Repeating this over many random initial conditions yields a distribution
whose mean (over fits accepted by the R^2 and magnitude filters) estimates
the maximum network Lyapunov exponent.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .metrics import DistanceSeries
from .network import Dataset, NetworkArchitecture, init_weights
from .parallel import run_indexed
from .perturbation import PerturbationSpec, run_ensemble
from .rng import derive_seed
from .training import GDConfig

__all__ = [
    "ExpFit",
    "ExponentEstimate",
    "ExponentDistribution",
    "finite_exponent",
    "fit_saturation_window",
    "scan_exponential_window",
    "nmle_pipeline",
    "write_lambda_csv",
    "write_nmle_summary",
]

R2_THRESHOLD = 0.9
LAMBDA_THRESHOLD = 0.05


@dataclass(frozen=True)
class ExpFit:
    """Ordinary least squares of ln(mean distance) vs iteration on a window."""

    t_start: int
    t_end: int
    slope: float
    intercept: float
    r_squared: float

    @property
    def window(self) -> tuple[int, int]:
        return (self.t_start, self.t_end)


@dataclass(frozen=True)
class ExponentEstimate:
    """Finite exponent for one initial condition, with its acceptance flags."""

    lambda_: float
    tau: int
    r_squared: float
    accepted: bool
    initial_condition_id: int


@dataclass
class ExponentDistribution:
    """Exponent estimates over many initial conditions.

    ``mean``/``std`` are computed over accepted estimates only;
    ``kept_fraction`` is accepted / total.
    """

    all_estimates: list[ExponentEstimate]

    @property
    def estimates(self) -> list[ExponentEstimate]:
        return [e for e in self.all_estimates if e.accepted]

    @property
    def kept_fraction(self) -> float:
        if not self.all_estimates:
            return 0.0
        return len(self.estimates) / len(self.all_estimates)

    @property
    def mean(self) -> float:
        kept = self.estimates
        return float(np.mean([e.lambda_ for e in kept])) if kept else float("nan")

    @property
    def std(self) -> float:
        kept = self.estimates
        return float(np.std([e.lambda_ for e in kept])) if kept else float("nan")


def finite_exponent(distances: list[DistanceSeries], tau: int) -> float:
    """Average-then-log expansion rate over [0, tau].

    Every series must cover iterations 0 and tau.  Raises on a degenerate
    ensemble whose mean initial distance is zero.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    d0 = np.mean([s.value_at(0) for s in distances])
    dt = np.mean([s.value_at(tau) for s in distances])
    if d0 == 0.0:
        raise ValueError("degenerate perturbation: mean initial distance is zero")
    return float(np.log(dt / d0) / tau)


def scan_exponential_window(
    iterations: np.ndarray,
    values: np.ndarray,
    min_window: int,
    max_window: int | None = None,
    max_start: int | None = None,
    start_stride: int = 1,
    end_stride: int = 1,
) -> ExpFit | None:
    """Best straight-line fit of ln(values) vs iteration over candidate windows.

    Window bounds are in iteration units: starts at iterations <= max_start,
    lengths in [min_window, max_window].  Points where the value is zero or
    non-finite cannot enter a window (any window containing one is invalid).
    Returns the window maximizing R^2 (ties: longer window, then earlier
    start), or None when no valid window exists.  With a stride, only every
    k-th recorded point is considered as a window boundary.
    """
    x = np.asarray(iterations, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    n = x.size
    if n < 2:
        return None
    bad = ~np.isfinite(v) | (v <= 0.0)
    y = np.where(bad, 0.0, np.log(np.where(bad, 1.0, v)))

    # prefix sums in extended precision; windows late in a long series
    # otherwise lose the variance terms to cancellation
    xl = x.astype(np.longdouble)
    yl = y.astype(np.longdouble)
    cb = np.concatenate([[0], np.cumsum(bad)])
    c1 = np.arange(n + 1, dtype=np.longdouble)
    cx = np.concatenate([[0], np.cumsum(xl)])
    cxx = np.concatenate([[0], np.cumsum(xl * xl)])
    cy = np.concatenate([[0], np.cumsum(yl)])
    cyy = np.concatenate([[0], np.cumsum(yl * yl)])
    cxy = np.concatenate([[0], np.cumsum(xl * yl)])

    starts = np.arange(0, n, start_stride)
    if max_start is not None:
        starts = starts[x[starts] <= max_start]
    ends = np.arange(0, n, end_stride)
    if n - 1 not in ends:
        ends = np.append(ends, n - 1)
    if starts.size == 0 or ends.size == 0:
        return None

    a = starts[:, None]
    b = ends[None, :]
    length = x[b] - x[a]
    hi = max_window if max_window is not None else np.inf
    valid = (length >= min_window) & (length <= hi)
    valid &= (cb[b + 1] - cb[a]) == 0
    cnt = c1[b + 1] - c1[a]
    valid &= cnt >= 3

    sx = cx[b + 1] - cx[a]
    sy = cy[b + 1] - cy[a]
    sxx = cxx[b + 1] - cxx[a]
    syy = cyy[b + 1] - cyy[a]
    sxy = cxy[b + 1] - cxy[a]
    with np.errstate(invalid="ignore", divide="ignore"):
        sxx_c = cnt * sxx - sx * sx
        syy_c = cnt * syy - sy * sy
        sxy_c = cnt * sxy - sx * sy
        r2 = np.where(
            (sxx_c > 0) & (syy_c > 0), (sxy_c * sxy_c) / (sxx_c * syy_c), 0.0
        )
    r2 = np.clip(r2.astype(np.float64), 0.0, 1.0)
    valid &= sxx_c > 0

    if not valid.any():
        return None
    ai, bi = np.nonzero(valid)
    order = np.lexsort((starts[ai], -length[valid].astype(np.float64), -r2[valid]))
    k = order[0]
    i0, i1 = int(starts[ai[k]]), int(ends[bi[k]])
    return _ols_fit(x[i0 : i1 + 1], y[i0 : i1 + 1])


def _ols_fit(x: np.ndarray, y: np.ndarray) -> ExpFit:
    """Stable two-pass least squares on one window (centered data)."""
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.sum(xc * xc))
    syy = float(np.sum(yc * yc))
    sxy = float(np.sum(xc * yc))
    slope = sxy / sxx
    r2 = 0.0 if syy <= 0.0 else min(max((sxy * sxy) / (sxx * syy), 0.0), 1.0)
    return ExpFit(
        t_start=int(x[0]),
        t_end=int(x[-1]),
        slope=slope,
        intercept=float(y.mean() - slope * x.mean()),
        r_squared=r2,
    )


def fit_saturation_window(
    mean_distance: DistanceSeries,
    min_window: int = 20,
    search_horizon: int = 500,
    max_start: int = 50,
) -> ExpFit | None:
    """Saturation-window search on an ensemble-mean distance series.

    Scans windows whose start lies in [0, max_start] and whose length lies
    in [min_window, search_horizon]; tau is the end of the winner.
    """
    return scan_exponential_window(
        mean_distance.iterations,
        mean_distance.values,
        min_window=min_window,
        max_window=search_horizon,
        max_start=max_start,
    )


def _estimate_one_ic(ctx, ic: int) -> ExponentEstimate:
    (arch, data, gd_config, m_per_ic, epsilon, seed,
     min_window, search_horizon, max_start, r2_min, lambda_min) = ctx
    w0 = init_weights(arch, derive_seed(seed, "ic-init", ic))
    spec = PerturbationSpec(
        epsilon=epsilon, count=m_per_ic, seed=derive_seed(seed, "ic-perturb", ic)
    )
    result = run_ensemble(arch, w0, spec, gd_config, data, member_keep="endpoint")
    full = len(result.reference.snapshot_iterations)
    survivors = [s for s in result.distances if len(s.values) == full]
    rejected = ExponentEstimate(float("nan"), 0, float("nan"), False, ic)
    if result.reference.diverged_at is not None or not survivors:
        return rejected
    mean = DistanceSeries(
        result.reference.snapshot_iterations,
        np.mean([s.values for s in survivors], axis=0),
    )
    fit = fit_saturation_window(mean, min_window, search_horizon, max_start)
    if fit is None:
        return rejected
    lam = finite_exponent(survivors, fit.t_end)
    accepted = fit.r_squared > r2_min and lam > lambda_min
    return ExponentEstimate(lam, fit.t_end, fit.r_squared, accepted, ic)


def nmle_pipeline(
    arch: NetworkArchitecture,
    data: Dataset,
    gd_config: GDConfig,
    n_initial_conditions: int,
    perturbations_per_ic: int,
    epsilon: float,
    seed: int,
    min_window: int = 20,
    search_horizon: int = 500,
    max_start: int = 50,
    r2_threshold: float = R2_THRESHOLD,
    lambda_threshold: float = LAMBDA_THRESHOLD,
    workers: int = 1,
) -> ExponentDistribution:
    """Exponent distribution over freshly initialized network initial conditions.

    Per initial condition: draw weights, run a perturbation ensemble, find
    the saturation window on the ensemble-mean distance, evaluate the
    finite exponent there, and apply the acceptance filter.  Members that
    diverge are excluded from that initial condition's ensemble.  The whole
    pipeline is a pure function of ``seed``; ``workers`` only changes how
    the independent initial conditions are scheduled.
    """
    ctx = (
        arch, data, gd_config, perturbations_per_ic, epsilon, seed,
        min_window, search_horizon, max_start, r2_threshold, lambda_threshold,
    )
    estimates = run_indexed(_estimate_one_ic, n_initial_conditions, ctx, workers)
    return ExponentDistribution(all_estimates=list(estimates))


def write_lambda_csv(path, dist: ExponentDistribution) -> None:
    """Per-initial-condition estimates: (ic_id, lambda, tau, r_squared, accepted)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ic_id", "lambda", "tau", "r_squared", "accepted"])
        for e in dist.all_estimates:
            writer.writerow(
                [
                    e.initial_condition_id,
                    repr(float(e.lambda_)),
                    e.tau,
                    repr(float(e.r_squared)),
                    int(e.accepted),
                ]
            )


def write_nmle_summary(
    path, dist: ExponentDistribution, eta: float, epsilon: float,
    n_ic: int, m: int, seed: int,
) -> None:
    """Scalar summary of one pipeline run as JSON."""
    payload = {
        "eta": eta,
        "epsilon": epsilon,
        "n_ic": n_ic,
        "m": m,
        "mean": dist.mean,
        "std": dist.std,
        "kept_fraction": dist.kept_fraction,
        "seed": seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
