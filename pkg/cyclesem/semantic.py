"""Semantic intermediate: the tissue map routed from the segmentor into the synthesizer."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data.records import onehot_from_probs

CONTINUOUS_SUM_TOLERANCE = 1e-5


class SemanticMode(Enum):
    CONTINUOUS = "continuous"  # per-pixel class posteriors
    DISCRETE = "discrete"      # per-pixel one-hot argmax


@dataclass(frozen=True)
class SemanticIntermediate:
    """(C, H, W) semantic map tagged with its mode."""
    values: np.ndarray
    mode: SemanticMode = SemanticMode.CONTINUOUS

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValueError(f"semantic map must be (C, H, W), got {values.shape}")
        if self.mode is SemanticMode.CONTINUOUS:
            sums = values.astype(np.float64).sum(axis=0)
            if values.min(initial=0.0) < 0 or np.max(np.abs(sums - 1.0), initial=0.0) > CONTINUOUS_SUM_TOLERANCE:
                raise ValueError("continuous semantic map must be non-negative and sum to 1 per pixel")
        else:
            if not np.all((values == 0.0) | (values == 1.0)) or not np.all(values.sum(axis=0) == 1.0):
                raise ValueError("discrete semantic map must be one-hot per pixel")
        object.__setattr__(self, "values", values)

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]


def discretize_values(values: np.ndarray) -> np.ndarray:
    """Argmax one-hot over axis -3 (works for (C, H, W) and (N, C, H, W)); ties to the lowest index."""
    values = np.asarray(values)
    if values.ndim == 3:
        return onehot_from_probs(values)
    winners = np.argmax(values, axis=-3)
    classes = np.arange(values.shape[-3]).reshape(-1, 1, 1)
    return (classes == winners[..., None, :, :]).astype(np.float32)


def discretize(semantic: SemanticIntermediate) -> SemanticIntermediate:
    """Per-pixel argmax one-hot. Idempotent: discrete input comes back unchanged."""
    return SemanticIntermediate(discretize_values(semantic.values), SemanticMode.DISCRETE)
