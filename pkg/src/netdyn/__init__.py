"""Training dynamics of small neural networks as a discrete dynamical system.

Deterministic full-batch gradient descent on sigmoid MLPs, perturbation
ensembles of initial conditions, network-space distances, finite network
Lyapunov exponents, and scalar time-series chaos diagnostics.
"""

from .chaos import (
    AcfResult,
    KantzAnchor,
    KantzResult,
    ScalarSeries,
    Segment,
    acf,
    acf_with_null,
    flag_quasi_periodic,
    kantz_expansion,
    shuffle_null,
)
from .datasets import SplitSpec, load_csv, load_iris, load_mnist_idx, split, standardize
from .lyapunov import (
    ExpFit,
    ExponentDistribution,
    ExponentEstimate,
    finite_exponent,
    fit_saturation_window,
    nmle_pipeline,
)
from .metrics import (
    DistanceSeries,
    WeightDiagnostics,
    ablation_importance,
    displacement,
    drift_quadrant_count,
    l1_distance,
    path_length,
    weight_diagnostics,
)
from .network import (
    Dataset,
    NetworkArchitecture,
    WeightSet,
    accuracy,
    forward,
    gradient,
    init_weights,
    loss,
    loss_and_gradient,
)
from .perturbation import EnsembleResult, PerturbationSpec, perturb, random_mask, run_ensemble
from .rng import derive_seed
from .training import GDConfig, Trajectory, gd_step, load_trajectory, save_trajectory, train

__version__ = "0.1.0"

__all__ = [
    "AcfResult", "KantzAnchor", "KantzResult", "ScalarSeries", "Segment",
    "acf", "acf_with_null", "flag_quasi_periodic", "kantz_expansion", "shuffle_null",
    "SplitSpec", "load_csv", "load_iris", "load_mnist_idx", "split", "standardize",
    "ExpFit", "ExponentDistribution", "ExponentEstimate",
    "finite_exponent", "fit_saturation_window", "nmle_pipeline",
    "DistanceSeries", "WeightDiagnostics", "ablation_importance", "displacement",
    "drift_quadrant_count", "l1_distance", "path_length", "weight_diagnostics",
    "Dataset", "NetworkArchitecture", "WeightSet",
    "accuracy", "forward", "gradient", "init_weights", "loss", "loss_and_gradient",
    "EnsembleResult", "PerturbationSpec", "perturb", "random_mask", "run_ensemble",
    "derive_seed",
    "GDConfig", "Trajectory", "gd_step", "load_trajectory", "save_trajectory", "train",
    "__version__",
]
