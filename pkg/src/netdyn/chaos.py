"""Scalar time-series diagnostics for the large learning-rate regime.

Three tools: the sample autocorrelation function with a permutation
(shuffle) null band, a Kantz-style estimate of local expansion rates with
permutation significance, and a sliding-window classifier that separates
quasi-periodic stretches (values bouncing between a few tight bands) from
irregular ones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .rng import derive_seed, stream

__all__ = [
    "ScalarSeries",
    "AcfResult",
    "KantzAnchor",
    "KantzResult",
    "Segment",
    "acf",
    "shuffle_null",
    "acf_with_null",
    "kantz_expansion",
    "flag_quasi_periodic",
    "write_acf_csv",
    "write_kantz_csv",
    "write_segments_csv",
]


@dataclass
class ScalarSeries:
    """A labeled one-dimensional observable (loss, one weight, ...)."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("series must be 1-D with at least two points")
        if not np.isfinite(self.values).all():
            raise ValueError("series must be finite")


def _values(series) -> np.ndarray:
    return np.asarray(getattr(series, "values", series), dtype=np.float64)


@dataclass
class AcfResult:
    """Autocorrelation point estimates and, optionally, a shuffle null band."""

    lags: np.ndarray
    values: np.ndarray
    null_low: np.ndarray | None = None
    null_high: np.ndarray | None = None
    n_shuffles: int = 0


def _acf_rows(rows: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample ACF of every row of a (batch, N) matrix."""
    x = rows - rows.mean(axis=1, keepdims=True)
    denom = np.sum(x * x, axis=1)
    if np.any(denom <= 0.0):
        raise ValueError("degenerate series: zero variance")
    out = np.empty((rows.shape[0], max_lag + 1))
    out[:, 0] = 1.0
    for k in range(1, max_lag + 1):
        out[:, k] = np.sum(x[:, :-k] * x[:, k:], axis=1) / denom
    return out


def acf(series, max_lag: int) -> AcfResult:
    """Biased sample autocorrelation up to ``max_lag``.

    ``acf[k] = sum_t (x_t - mean)(x_{t+k} - mean) / sum_t (x_t - mean)^2``.
    """
    x = _values(series)
    if not max_lag < x.size / 2:
        raise ValueError("max_lag must be below half the series length")
    values = _acf_rows(x[None, :], max_lag)[0]
    return AcfResult(lags=np.arange(max_lag + 1), values=values)


def shuffle_null(
    series, max_lag: int, n_shuffles: int = 1000, alpha: float = 0.05, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Per-lag empirical (alpha/2, 1-alpha/2) ACF band under random shuffling.

    Shuffling destroys all autocorrelation, so the band is the null
    envelope for "no temporal structure" at each lag.
    """
    x = _values(series)
    if not max_lag < x.size / 2:
        raise ValueError("max_lag must be below half the series length")
    rng = stream(seed)
    keys = rng.random((n_shuffles, x.size))
    shuffled = x[np.argsort(keys, axis=1)]
    acfs = _acf_rows(shuffled, max_lag)
    low = np.percentile(acfs, 100 * alpha / 2, axis=0)
    high = np.percentile(acfs, 100 * (1 - alpha / 2), axis=0)
    return low, high


def acf_with_null(
    series, max_lag: int, n_shuffles: int = 1000, alpha: float = 0.05, seed: int = 0
) -> AcfResult:
    """ACF point estimates together with the shuffle null band."""
    result = acf(series, max_lag)
    result.null_low, result.null_high = shuffle_null(series, max_lag, n_shuffles, alpha, seed)
    result.n_shuffles = n_shuffles
    return result


@dataclass
class KantzAnchor:
    """Expansion record for one anchor point of the series."""

    index: int
    value: float
    curve: np.ndarray  # ln mean neighbor distance at steps 0..horizon
    slope: float
    p_value: float
    significant: bool


@dataclass
class KantzResult:
    """Per-anchor expansion rates plus the pooled surrogate null slopes."""

    anchors: list[KantzAnchor]
    skipped: int
    null_slopes: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def significant_slopes(self) -> np.ndarray:
        return np.array([a.slope for a in self.anchors if a.significant])

    @property
    def significant_fraction(self) -> float:
        if not self.anchors:
            return 0.0
        return sum(a.significant for a in self.anchors) / len(self.anchors)


def _spread_indices(n: int, k: int) -> np.ndarray:
    """Up to k indices spread evenly over range(n)."""
    if n <= k:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, k)).astype(np.int64))


def _anchor_slopes(
    x: np.ndarray,
    embed_dim: int,
    delay: int,
    radius: float,
    theiler: int,
    horizon: int,
    fit_steps: np.ndarray,
    min_neighbors: int,
    max_neighbors: int,
    max_anchors: int,
    want_curves: bool,
):
    """Per-anchor expansion curves and fitted slopes for one series.

    Returns (anchor indices, values at anchors, curves or None, slopes,
    skipped count).  Neighborhoods live in the delay embedding; distances
    at future steps are between scalar series values.
    """
    n = x.size
    offset = (embed_dim - 1) * delay
    n_embed = n - offset
    last_valid = n_embed - 1 - horizon
    if last_valid < 1:
        raise ValueError("series too short for the requested embedding and horizon")
    if embed_dim == 1:
        embedded = x[:n_embed, None]
    else:
        embedded = np.stack([x[k * delay : k * delay + n_embed] for k in range(embed_dim)], axis=1)

    candidates = _spread_indices(last_valid + 1, max_anchors)
    steps = np.arange(horizon + 1)
    idx_all = np.arange(last_valid + 1)

    kept_idx, kept_val, curves, slopes = [], [], [], []
    skipped = 0
    sx = fit_steps.astype(np.float64)
    sx_c = sx - sx.mean()
    sxx = np.sum(sx_c * sx_c)
    for i in candidates:
        # Chebyshev ball in embedding space, Theiler-excluded
        diff = np.abs(embedded[: last_valid + 1] - embedded[i]).max(axis=1)
        mask = (diff <= radius) & (np.abs(idx_all - i) > theiler)
        neigh = np.nonzero(mask)[0]
        if neigh.size < min_neighbors:
            skipped += 1
            continue
        if neigh.size > max_neighbors:
            order = np.argsort(diff[neigh], kind="stable")[:max_neighbors]
            neigh = neigh[order]
        future = np.abs(
            x[neigh[:, None] + offset + steps[None, :]] - x[i + offset + steps]
        )
        mean_d = future.mean(axis=0)
        with np.errstate(divide="ignore"):
            curve = np.log(mean_d)
        yfit = curve[fit_steps]
        if not np.isfinite(yfit).all():
            skipped += 1
            continue
        slope = float(np.sum(sx_c * (yfit - yfit.mean())) / sxx)
        kept_idx.append(int(i + offset))
        kept_val.append(float(x[i + offset]))
        slopes.append(slope)
        if want_curves:
            curves.append(curve)
    return kept_idx, kept_val, curves if want_curves else None, np.array(slopes), skipped


def kantz_expansion(
    series,
    embed_dim: int = 1,
    delay: int = 1,
    neighborhood_radius: float | None = None,
    theiler_window: int = 10,
    horizon: int = 20,
    fit_window: tuple[int, int] = (1, 10),
    min_neighbors: int = 5,
    max_neighbors: int = 100,
    max_anchors: int = 1000,
    n_surrogates: int = 200,
    null_anchors_per_surrogate: int = 25,
    alpha: float = 0.05,
    seed: int = 0,
) -> KantzResult:
    """Local expansion rates with permutation significance.

    For each anchor with at least ``min_neighbors`` within
    ``neighborhood_radius`` (default 0.05 x series std) in the delay
    embedding, the expansion curve is ln of the mean distance between the
    anchor's future and its neighbors' futures at steps 0..horizon.  The
    slope is fit over ``fit_window`` (inclusive step range; the default
    starts at step 1 because shuffled data jumps to the attractor scale in
    a single step, which would otherwise masquerade as expansion).  Each
    slope is compared one-sidedly against the pooled slopes of
    ``n_surrogates`` shuffled series processed identically; anchors with
    permutation p-value below ``alpha`` are flagged significant.
    """
    x = _values(series)
    if embed_dim < 1 or delay < 1 or horizon < 1:
        raise ValueError("embed_dim, delay and horizon must be >= 1")
    lo, hi = fit_window
    if not (0 <= lo < hi <= horizon):
        raise ValueError("fit_window must satisfy 0 <= start < stop <= horizon")
    need = (embed_dim - 1) * delay + horizon
    if x.size - need < 100:
        raise ValueError("series too short: need at least 100 usable points")
    radius = float(neighborhood_radius) if neighborhood_radius is not None else 0.05 * float(np.std(x))
    if radius <= 0:
        raise ValueError("neighborhood radius must be positive")
    fit_steps = np.arange(lo, hi + 1)

    idx, vals, curves, slopes, skipped = _anchor_slopes(
        x, embed_dim, delay, radius, theiler_window, horizon,
        fit_steps, min_neighbors, max_neighbors, max_anchors, want_curves=True,
    )

    null_slopes = []
    for s in range(n_surrogates):
        rng = stream(derive_seed(seed, "kantz-surrogate", s))
        xs = x[rng.permutation(x.size)]
        _, _, _, s_slopes, _ = _anchor_slopes(
            xs, embed_dim, delay, radius, theiler_window, horizon,
            fit_steps, min_neighbors, max_neighbors, null_anchors_per_surrogate,
            want_curves=False,
        )
        null_slopes.append(s_slopes)
    null = np.concatenate(null_slopes) if null_slopes else np.array([])

    anchors = []
    n_null = null.size
    for i, v, c, m in zip(idx, vals, curves, slopes):
        if n_null:
            p = (1 + int(np.sum(null >= m))) / (1 + n_null)
        else:
            p = 1.0  # no null population: cannot reject randomness
        anchors.append(KantzAnchor(i, v, c, m, p, p < alpha))
    params = {
        "embed_dim": embed_dim, "delay": delay, "neighborhood_radius": radius,
        "theiler_window": theiler_window, "horizon": horizon,
        "fit_window": [lo, hi], "min_neighbors": min_neighbors,
        "max_neighbors": max_neighbors, "max_anchors": max_anchors,
        "n_surrogates": n_surrogates,
        "null_anchors_per_surrogate": null_anchors_per_surrogate,
        "alpha": alpha, "seed": seed,
    }
    return KantzResult(anchors=anchors, skipped=skipped, null_slopes=null, params=params)


@dataclass(frozen=True)
class Segment:
    """Contiguous classified stretch [start, end) of a series."""

    start: int
    end: int
    label: str  # "quasi_periodic" or "irregular"


def _window_is_quasi_periodic(w: np.ndarray, n_regions: int, tol: float) -> bool:
    bands = []
    for r in range(n_regions):
        phase = w[r::n_regions]
        if phase.size == 0:
            return False
        bands.append((phase.min(), phase.max()))
    bands.sort()
    widths = [hi - lo for lo, hi in bands]
    gaps = [bands[i + 1][0] - bands[i][1] for i in range(n_regions - 1)]
    if min(gaps) <= 0:
        return False
    return max(widths) <= tol * min(gaps)


def flag_quasi_periodic(
    series, window: int = 60, n_regions: int = 3, region_tolerance: float = 1e-3
) -> list[Segment]:
    """Split a series into quasi-periodic and irregular segments.

    A window is quasi-periodic when the values at stride ``n_regions``
    fall into ``n_regions`` disjoint bands (one per phase) whose widths are
    at most ``region_tolerance`` times the smallest gap between bands.
    Consecutive windows of equal class are merged; the trailing remainder
    shorter than one window joins the final segment.
    """
    x = _values(series)
    if x.size < 3 * window:
        raise ValueError("series must be at least 3 windows long")
    labels = []
    starts = list(range(0, x.size - window + 1, window))
    for s in starts:
        ok = _window_is_quasi_periodic(x[s : s + window], n_regions, region_tolerance)
        labels.append("quasi_periodic" if ok else "irregular")
    segments = []
    seg_start = 0
    for i in range(1, len(labels)):
        if labels[i] != labels[i - 1]:
            segments.append(Segment(starts[seg_start], starts[i], labels[i - 1]))
            seg_start = i
    segments.append(Segment(starts[seg_start], x.size, labels[-1]))
    return segments


def write_acf_csv(path, result: AcfResult) -> None:
    """(lag, acf, null_low, null_high) rows; band cells empty when absent."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "acf", "null_low", "null_high"])
        for i, lag in enumerate(result.lags):
            writer.writerow(
                [
                    int(lag),
                    repr(float(result.values[i])),
                    repr(float(result.null_low[i])) if result.null_low is not None else "",
                    repr(float(result.null_high[i])) if result.null_high is not None else "",
                ]
            )


def write_kantz_csv(path, result: KantzResult) -> None:
    """(anchor, value_at_anchor, lambda, p_value, significant) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["anchor", "value_at_anchor", "lambda", "p_value", "significant"])
        for a in result.anchors:
            writer.writerow(
                [a.index, repr(float(a.value)), repr(float(a.slope)),
                 repr(float(a.p_value)), int(a.significant)]
            )


def write_segments_csv(path, segments: list[Segment]) -> None:
    """(start, end, class) rows; end is exclusive."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start", "end", "class"])
        for seg in segments:
            writer.writerow([seg.start, seg.end, seg.label])
