"""Numerical laboratory for linear concept-removal methods on synthetic data.

The package trains linear (and one-hidden-layer) classifiers on controlled
synthetic datasets, applies two removal strategies to them, and measures
what each strategy actually does to the features the main task relies on:

* null-space projection: repeatedly project representations onto the null
  space of a freshly trained probing classifier (`erasure_lab.inlp`),
* adversarial removal: train an encoder against a gradient-reversed probe
  head (`erasure_lab.adversarial`).

Supporting modules: `latent` and `text` generate the datasets, `maxmargin`
trains and certifies the linear classifiers, `theory` checks the margin
constructions that predict when removal fails, `metrics` scores the damage,
and `cli` runs the whole thing from config files.
"""

__version__ = "0.1.0"

from .adversarial import AdvModel, AdvSettings, adv_train, erm_train, lambda_sweep
from .inlp import InlpTrace, apply_projection, inlp_run, projection_matrix
from .latent import (
    GenConfig,
    GroupPartition,
    LatentDataset,
    compute_kappa,
    flip_label_noise,
    gen_disentangled,
    group_partition,
    make_clean_subset,
    rebalance_to_kappa,
)
from .maxmargin import (
    LinearClassifier,
    MarginReport,
    NotSeparableError,
    TrainSettings,
    is_separable,
    margins,
    train_logistic,
    train_max_margin,
)
from .metrics import pearson, psi_from_accuracies, spuriousness_main, spuriousness_probe
from .theory import check_assumptions, construct_perturbed, verify_sufficient

__all__ = [
    "AdvModel",
    "AdvSettings",
    "GenConfig",
    "GroupPartition",
    "InlpTrace",
    "LatentDataset",
    "LinearClassifier",
    "MarginReport",
    "NotSeparableError",
    "TrainSettings",
    "adv_train",
    "apply_projection",
    "check_assumptions",
    "compute_kappa",
    "construct_perturbed",
    "erm_train",
    "flip_label_noise",
    "gen_disentangled",
    "group_partition",
    "inlp_run",
    "is_separable",
    "lambda_sweep",
    "make_clean_subset",
    "margins",
    "pearson",
    "projection_matrix",
    "psi_from_accuracies",
    "rebalance_to_kappa",
    "spuriousness_main",
    "spuriousness_probe",
    "train_logistic",
    "train_max_margin",
    "verify_sufficient",
]
