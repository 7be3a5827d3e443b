"""Configuration-driven experiment runner with a reproducibility manifest.

An experiment is described by a JSON config (strict schema: unknown keys
are errors, every number-affecting parameter is either present or has a
documented default).  Running one writes the producing modules' CSV/JSON
tables into the output directory plus ``manifest.json`` — the fully
resolved config, the master seed and per-component derived seeds, code
version, timestamps, and a SHA-256 inventory of every output file.
Re-running a manifest's config reproduces the inventory byte for byte; the
worker count never changes output bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .chaos import (
    acf_with_null,
    flag_quasi_periodic,
    kantz_expansion,
    write_acf_csv,
    write_kantz_csv,
    write_segments_csv,
)
from .datasets import SplitSpec, load_csv, load_mnist_idx, split, standardize
from .lyapunov import nmle_pipeline, write_lambda_csv, write_nmle_summary
from .metrics import ablation_importance, weight_diagnostics, write_weight_diag_csv
from .network import NetworkArchitecture, accuracy, init_weights, loss, param_coords
from .perturbation import PerturbationSpec, random_mask, run_ensemble, write_distances_csv
from .rng import derive_seed
from .training import GDConfig, train, save_trajectory, write_trajectory_csv

__all__ = ["ConfigError", "EXPERIMENT_KINDS", "load_config", "validate_config",
           "run_experiment", "replay_manifest"]


class ConfigError(ValueError):
    """A config file violates the schema; message names the field."""


EXPERIMENT_KINDS = (
    "train", "ensemble", "post_perturb", "eps_sweep", "nmle",
    "ablation", "weight_diag", "acf", "kantz", "segments",
)

_REQUIRED = object()

# field name -> (accepted types, default); _REQUIRED means the field must
# be present.  None in the types tuple allows JSON null.
_GD_FIELDS = {"eta": ((int, float), _REQUIRED), "iterations": (int, _REQUIRED),
              "snapshot_stride": (int, 1)}
_PERTURBATION_FIELDS = {
    "epsilon": ((int, float), _REQUIRED), "count": (int, _REQUIRED),
    "mask_size": ((int, type(None)), None), "at_iteration": (int, 0),
}
_ANALYSIS_DEFAULTS = {
    "train": {"record_accuracy": True},
    "ensemble": {"member_keep": "all"},
    "post_perturb": {"member_keep": "all"},
    "eps_sweep": {"epsilons": _REQUIRED, "member_keep": "all"},
    "nmle": {"n_initial_conditions": _REQUIRED, "min_window": 20,
             "search_horizon": 500, "max_start": 50,
             "r2_threshold": 0.9, "lambda_threshold": 0.05},
    "ablation": {},
    "weight_diag": {},
    "acf": {"max_lag": 50, "n_shuffles": 1000, "alpha": 0.05, "segment": None,
            "segment_window": 60, "segment_regions": 3, "segment_tolerance": 1e-3},
    "kantz": {"embed_dim": 1, "delay": 1, "neighborhood_radius": None,
              "theiler_window": 10, "horizon": 20, "fit_start": 1, "fit_stop": 10,
              "min_neighbors": 5, "max_neighbors": 100, "max_anchors": 1000,
              "n_surrogates": 200, "null_anchors_per_surrogate": 25,
              "alpha": 0.05, "segment": None,
              "segment_window": 60, "segment_regions": 3, "segment_tolerance": 1e-3},
    "segments": {"window": 60, "n_regions": 3, "region_tolerance": 1e-3},
}
_NEEDS_PERTURBATION = {"ensemble", "post_perturb", "eps_sweep", "nmle"}


def load_config(path) -> dict:
    """Read, validate and default-fill a JSON experiment config."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return validate_config(raw)


def _check_scalar(path: str, value, types):
    ok = False
    for t in types:
        if t is None and value is None:
            ok = True
        elif isinstance(t, type) and t is not None and isinstance(value, t):
            if t in (int, float) and isinstance(value, bool):
                continue  # bools are ints in Python; reject for numeric fields
            ok = True
    if not ok:
        names = "/".join("null" if t is None else t.__name__ for t in types)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")


def _resolve_block(name: str, block, fields: dict, defaults: dict | None = None) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"{name}: expected an object")
    out = {}
    block = dict(block)
    for key, (types, default) in fields.items():
        if key in block:
            value = block.pop(key)
            if not isinstance(types, tuple):
                types = (types,)
            _check_scalar(f"{name}.{key}", value, types)
            out[key] = value
        elif default is _REQUIRED:
            raise ConfigError(f"{name}.{key}: required field missing")
        else:
            out[key] = default
    if defaults:
        for key, default in defaults.items():
            if key in block:
                out[key] = block.pop(key)
            elif default is _REQUIRED:
                raise ConfigError(f"{name}.{key}: required field missing")
            else:
                out[key] = default
    if block:
        raise ConfigError(f"{name}: unknown key(s) {sorted(block)}")
    return out


def validate_config(raw) -> dict:
    """Validate a parsed config dict; returns the fully resolved copy."""
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected an object")
    raw = dict(raw)
    resolved = {}
    for key, types in (("kind", (str,)), ("seed", (int,)), ("output_dir", (str,))):
        if key not in raw:
            raise ConfigError(f"{key}: required field missing")
        value = raw.pop(key)
        _check_scalar(key, value, types)
        resolved[key] = value
    kind = resolved["kind"]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"kind: {kind!r} is not one of {sorted(EXPERIMENT_KINDS)}")

    if "dataset" not in raw:
        raise ConfigError("dataset: required field missing")
    ds = _resolve_block("dataset", raw.pop("dataset"), {}, defaults={
        "kind": _REQUIRED, "path": None, "images": None, "labels": None,
        "subset_size": None, "n_train": None, "n_test": None,
        "stratified": True, "standardize": False,
    })
    if ds["kind"] == "iris_csv" or ds["kind"] == "csv":
        if not ds["path"]:
            raise ConfigError("dataset.path: required for CSV datasets")
    elif ds["kind"] == "mnist_idx":
        if not ds["images"] or not ds["labels"]:
            raise ConfigError("dataset.images/dataset.labels: required for mnist_idx")
    else:
        raise ConfigError(f"dataset.kind: {ds['kind']!r} not one of ['iris_csv', 'csv', 'mnist_idx']")
    resolved["dataset"] = ds

    if "architecture" not in raw:
        raise ConfigError("architecture: required field missing")
    arch_block = _resolve_block("architecture", raw.pop("architecture"),
                                {"hidden": (list, _REQUIRED)})
    hidden = arch_block["hidden"]
    if not hidden or not all(isinstance(h, int) and h >= 1 for h in hidden):
        raise ConfigError("architecture.hidden: expected a non-empty list of positive ints")
    resolved["architecture"] = arch_block

    if "gd" not in raw:
        raise ConfigError("gd: required field missing")
    gd = _resolve_block("gd", raw.pop("gd"), _GD_FIELDS)
    if gd["eta"] <= 0 or gd["iterations"] < 0 or gd["snapshot_stride"] < 1:
        raise ConfigError("gd: eta must be > 0, iterations >= 0, snapshot_stride >= 1")
    resolved["gd"] = gd

    if kind in _NEEDS_PERTURBATION:
        if "perturbation" not in raw:
            raise ConfigError("perturbation: required for this experiment kind")
        pert = _resolve_block("perturbation", raw.pop("perturbation"), _PERTURBATION_FIELDS)
        if pert["epsilon"] <= 0 and kind != "eps_sweep":
            raise ConfigError("perturbation.epsilon: must be positive")
        if pert["count"] < 1:
            raise ConfigError("perturbation.count: must be >= 1")
        if pert["at_iteration"] < 0:
            raise ConfigError("perturbation.at_iteration: must be >= 0")
        if kind == "post_perturb" and pert["at_iteration"] < 1:
            raise ConfigError("perturbation.at_iteration: post_perturb needs >= 1")
        resolved["perturbation"] = pert
    elif "perturbation" in raw:
        raw.pop("perturbation")  # tolerated but unused
    analysis = _resolve_block("analysis", raw.pop("analysis", {}), {},
                              defaults=_ANALYSIS_DEFAULTS[kind])
    if kind == "eps_sweep":
        eps = analysis["epsilons"]
        if (not isinstance(eps, list) or not eps
                or not all(isinstance(e, (int, float)) and e > 0 for e in eps)):
            raise ConfigError("analysis.epsilons: expected a non-empty list of positive numbers")
    resolved["analysis"] = analysis
    if raw:
        raise ConfigError(f"config root: unknown key(s) {sorted(raw)}")
    return resolved


def _load_dataset(resolved: dict):
    """Returns (train_data, eval_data, derived_seeds dict)."""
    ds = resolved["dataset"]
    seeds = {}
    if ds["kind"] in ("iris_csv", "csv"):
        full = load_csv(ds["path"])
        if ds["n_train"] is not None:
            seeds["split"] = derive_seed(resolved["seed"], "split", 0)
            spec = SplitSpec(ds["n_train"], ds["n_test"] or 0,
                             seed=seeds["split"], stratified=ds["stratified"])
            train_d, test_d = split(full, spec)
        else:
            train_d, test_d = full, None
        if ds["standardize"]:
            train_d, test_d, _, _ = standardize(train_d, test_d)
        return train_d, test_d, seeds
    seeds["subset"] = derive_seed(resolved["seed"], "subset", 0)
    data = load_mnist_idx(ds["images"], ds["labels"],
                          subset_size=ds["subset_size"], seed=seeds["subset"])
    return data, None, seeds


def _architecture(resolved: dict, data) -> NetworkArchitecture:
    hidden = resolved["architecture"]["hidden"]
    return NetworkArchitecture((data.n_features, *hidden, data.n_classes))


def _gd_config(resolved: dict) -> GDConfig:
    gd = resolved["gd"]
    return GDConfig(float(gd["eta"]), gd["iterations"], gd["snapshot_stride"])


def _loss_series_for_analysis(resolved, workers):
    """Train once and return (trajectory, loss series) for scalar analyses."""
    data, test_d, seeds = _load_dataset(resolved)
    arch = _architecture(resolved, data)
    seeds["init"] = derive_seed(resolved["seed"], "init", 0)
    w0 = init_weights(arch, seeds["init"])
    traj = train(arch, w0, _gd_config(resolved), data, test_d)
    return traj, traj.loss_series, seeds


def _select_segment(series: np.ndarray, analysis: dict, outputs, out_dir):
    """Explicit [start, end) segment, or the longest irregular one."""
    seg = analysis["segment"]
    if seg is not None:
        if (not isinstance(seg, list) or len(seg) != 2
                or not all(isinstance(v, int) for v in seg)
                or not 0 <= seg[0] < seg[1] <= series.size):
            raise ConfigError("analysis.segment: expected [start, end) within the series")
        return series[seg[0]:seg[1]], tuple(seg)
    segments = flag_quasi_periodic(
        series, window=analysis["segment_window"],
        n_regions=analysis["segment_regions"],
        region_tolerance=analysis["segment_tolerance"],
    )
    irregular = [g for g in segments if g.label == "irregular"]
    if not irregular:
        raise ValueError("no irregular segment found; pass analysis.segment explicitly")
    g = max(irregular, key=lambda g: g.end - g.start)
    return series[g.start:g.end], (g.start, g.end)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(resolved: dict, workers: int = 1) -> dict:
    """Execute a validated config; returns the manifest (also written).

    Output files land in ``output_dir``; the manifest inventory carries a
    SHA-256 per file.  Identical configs and seeds give identical
    inventories for any worker count.
    """
    started = datetime.now(timezone.utc).isoformat()
    out_dir = resolved["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    kind = resolved["kind"]
    analysis = resolved["analysis"]
    master = resolved["seed"]
    outputs: list[str] = []
    extras: dict = {}

    def path(name):
        outputs.append(name)
        return os.path.join(out_dir, name)

    if kind == "train":
        data, test_d, seeds = _load_dataset(resolved)
        arch = _architecture(resolved, data)
        seeds["init"] = derive_seed(master, "init", 0)
        w0 = init_weights(arch, seeds["init"])
        traj = train(arch, w0, _gd_config(resolved), data, test_d,
                     record_accuracy=analysis["record_accuracy"])
        write_trajectory_csv(path("trajectory.csv"), traj)
        save_trajectory(path("trajectory.bin"), traj, arch, _gd_config(resolved), seeds["init"])
        extras["final_loss"] = float(traj.loss_series[-1])
        extras["final_accuracy_train"] = accuracy(arch, traj.final, data)

    elif kind in ("ensemble", "post_perturb"):
        data, test_d, seeds = _load_dataset(resolved)
        arch = _architecture(resolved, data)
        seeds["init"] = derive_seed(master, "init", 0)
        w0 = init_weights(arch, seeds["init"])
        pert = resolved["perturbation"]
        if pert["at_iteration"] > 0:
            warmup = GDConfig(float(resolved["gd"]["eta"]), pert["at_iteration"],
                              snapshot_stride=pert["at_iteration"])
            w0 = train(arch, w0, warmup, data).final
            extras["perturbed_at_iteration"] = pert["at_iteration"]
        mask = None
        if pert["mask_size"] is not None:
            seeds["mask"] = derive_seed(master, "mask", 0)
            mask = random_mask(arch.n_params, pert["mask_size"], seeds["mask"])
        seeds["perturb"] = derive_seed(master, "perturb", 0)
        spec = PerturbationSpec(float(pert["epsilon"]), pert["count"], mask, seeds["perturb"])
        result = run_ensemble(arch, w0, spec, _gd_config(resolved), data, test_d,
                              member_keep=analysis["member_keep"], workers=workers)
        write_distances_csv(path("distances.csv"), result)
        write_trajectory_csv(path("reference.csv"), result.reference)

    elif kind == "eps_sweep":
        data, test_d, seeds = _load_dataset(resolved)
        arch = _architecture(resolved, data)
        seeds["init"] = derive_seed(master, "init", 0)
        w0 = init_weights(arch, seeds["init"])
        pert = resolved["perturbation"]
        reference = train(arch, w0, _gd_config(resolved), data, test_d)
        for k, eps in enumerate(analysis["epsilons"]):
            seeds[f"perturb_{k}"] = derive_seed(master, "perturb", k)
            spec = PerturbationSpec(float(eps), pert["count"], None, seeds[f"perturb_{k}"])
            result = run_ensemble(arch, w0, spec, _gd_config(resolved), data, test_d,
                                  reference=reference,
                                  member_keep=analysis["member_keep"], workers=workers)
            write_distances_csv(path(f"distances_eps_{eps:g}.csv"), result)
        write_trajectory_csv(path("reference.csv"), reference)

    elif kind == "nmle":
        data, _, seeds = _load_dataset(resolved)
        arch = _architecture(resolved, data)
        pert = resolved["perturbation"]
        dist = nmle_pipeline(
            arch, data, _gd_config(resolved),
            n_initial_conditions=analysis["n_initial_conditions"],
            perturbations_per_ic=pert["count"],
            epsilon=float(pert["epsilon"]),
            seed=master,
            min_window=analysis["min_window"],
            search_horizon=analysis["search_horizon"],
            max_start=analysis["max_start"],
            r2_threshold=analysis["r2_threshold"],
            lambda_threshold=analysis["lambda_threshold"],
            workers=workers,
        )
        write_lambda_csv(path("lambda.csv"), dist)
        write_nmle_summary(path("nmle_summary.json"), dist,
                           eta=float(resolved["gd"]["eta"]),
                           epsilon=float(pert["epsilon"]),
                           n_ic=analysis["n_initial_conditions"],
                           m=pert["count"], seed=master)

    elif kind == "ablation":
        data, _, seeds = _load_dataset(resolved)
        arch = _architecture(resolved, data)
        seeds["init"] = derive_seed(master, "init", 0)
        w0 = init_weights(arch, seeds["init"])
        traj = train(arch, w0, _gd_config(resolved), data)
        deltas = ablation_importance(arch, traj.final, data)
        base = loss(arch, traj.final, data)
        coords = param_coords(arch)
        flat = traj.final.flatten()
        with open(path("ablation.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param_index", "layer", "row", "col", "is_bias",
                             "weight", "ablation_delta", "ablation_ratio"])
            for p in range(arch.n_params):
                c = coords[p]
                writer.writerow([p, int(c["layer"]), int(c["row"]), int(c["col"]),
                                 int(c["is_bias"]), repr(float(flat[p])),
                                 repr(float(deltas[p])), repr(float(deltas[p] / base))])
        extras["baseline_loss"] = base

    elif kind == "weight_diag":
        data, _, seeds = _load_dataset(resolved)
        arch = _architecture(resolved, data)
        if resolved["gd"]["snapshot_stride"] != 1:
            raise ConfigError("gd.snapshot_stride: weight_diag needs stride 1")
        seeds["init"] = derive_seed(master, "init", 0)
        w0 = init_weights(arch, seeds["init"])
        traj = train(arch, w0, _gd_config(resolved), data)
        diag = weight_diagnostics(arch, traj, data)
        write_weight_diag_csv(path("weight_diag.csv"), diag)
        extras["baseline_loss"] = diag.baseline_loss

    elif kind == "acf":
        traj, series, seeds = _loss_series_for_analysis(resolved, workers)
        seg, bounds = _select_segment(series, analysis, outputs, out_dir)
        seeds["shuffle"] = derive_seed(master, "shuffle", 0)
        result = acf_with_null(seg, analysis["max_lag"],
                               n_shuffles=analysis["n_shuffles"],
                               alpha=analysis["alpha"], seed=seeds["shuffle"])
        write_acf_csv(path("acf.csv"), result)
        extras["segment"] = list(bounds)

    elif kind == "kantz":
        traj, series, seeds = _loss_series_for_analysis(resolved, workers)
        seg, bounds = _select_segment(series, analysis, outputs, out_dir)
        result = kantz_expansion(
            seg,
            embed_dim=analysis["embed_dim"], delay=analysis["delay"],
            neighborhood_radius=analysis["neighborhood_radius"],
            theiler_window=analysis["theiler_window"], horizon=analysis["horizon"],
            fit_window=(analysis["fit_start"], analysis["fit_stop"]),
            min_neighbors=analysis["min_neighbors"],
            max_neighbors=analysis["max_neighbors"],
            max_anchors=analysis["max_anchors"],
            n_surrogates=analysis["n_surrogates"],
            null_anchors_per_surrogate=analysis["null_anchors_per_surrogate"],
            alpha=analysis["alpha"],
            seed=derive_seed(master, "kantz", 0),
        )
        write_kantz_csv(path("kantz.csv"), result)
        extras["segment"] = list(bounds)
        extras["kantz_params"] = result.params
        extras["skipped_anchors"] = result.skipped

    elif kind == "segments":
        traj, series, seeds = _loss_series_for_analysis(resolved, workers)
        segs = flag_quasi_periodic(series, window=analysis["window"],
                                   n_regions=analysis["n_regions"],
                                   region_tolerance=analysis["region_tolerance"])
        write_segments_csv(path("segments.csv"), segs)

    else:  # pragma: no cover - kinds are validated upfront
        raise ConfigError(f"kind: {kind!r} not implemented")

    manifest = {
        "config": resolved,
        "master_seed": master,
        "derived_seeds": {k: int(v) for k, v in seeds.items()},
        "code_version": __version__,
        "workers": workers,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": {name: _sha256(os.path.join(out_dir, name)) for name in outputs},
        "extras": extras,
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def replay_manifest(manifest_path, output_dir) -> tuple[bool, dict]:
    """Re-run a manifest's config and compare output hashes.

    Returns (all_match, {file: (expected, actual)}); the rerun writes into
    ``output_dir``.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    resolved = validate_config(manifest["config"])
    resolved["output_dir"] = str(output_dir)
    new_manifest = run_experiment(resolved, workers=manifest.get("workers", 1))
    expected = manifest["outputs"]
    actual = new_manifest["outputs"]
    comparison = {
        name: (expected.get(name), actual.get(name))
        for name in sorted(set(expected) | set(actual))
    }
    all_match = all(e == a and e is not None for e, a in comparison.values())
    return all_match, comparison
