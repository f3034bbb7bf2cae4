"""Anomaly localization by cycle reconstruction residuals."""

from ..semantic import SemanticIntermediate, SemanticMode, discretize
from .pipeline import (
    LESION_KEY,
    PosteriorStats,
    ResidualMap,
    ResidualSet,
    class_posterior_stats,
    posterior_separation,
    read_residuals,
    reconstruct,
    reconstruct_batch,
    residual,
    residual_values,
    score_split,
    smooth_residual,
    write_residuals,
)

__all__ = [
    # Semantic intermediate
    "SemanticIntermediate",
    "SemanticMode",
    "discretize",
    # Cycle and residuals
    "ResidualMap",
    "reconstruct",
    "reconstruct_batch",
    "residual",
    "residual_values",
    "smooth_residual",
    # Diagnostics
    "LESION_KEY",
    "PosteriorStats",
    "class_posterior_stats",
    "posterior_separation",
    # Export
    "ResidualSet",
    "read_residuals",
    "score_split",
    "write_residuals",
]
