"""Heterogeneous peer effects in binary games with latent group structure."""

from ._core import (
    FORMAT_VERSION,
    ConvergenceError,
    Group,
    HetpeerError,
    IoError,
    Panel,
    ValidationError,
    classification_accuracy,
    empirical_quantile,
    load_panel,
    npl_fit,
    run_pipeline,
    save_panel,
    simulate,
    weighted_geometric_median,
)

__all__ = [
    "FORMAT_VERSION",
    "ConvergenceError",
    "Group",
    "HetpeerError",
    "IoError",
    "Panel",
    "ValidationError",
    "classification_accuracy",
    "empirical_quantile",
    "load_panel",
    "npl_fit",
    "run_pipeline",
    "save_panel",
    "simulate",
    "weighted_geometric_median",
]
__version__ = "0.1.0"
