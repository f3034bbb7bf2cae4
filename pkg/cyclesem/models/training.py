"""Shared training plumbing: seeding, batching, loss curves, divergence checks."""

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset

from ..errors import EmptySplitError, TrainingDivergedError

logger = logging.getLogger(__name__)


def seed_everything(seed: int, deterministic: bool = True):
    """Seed Python, NumPy and torch; optionally force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if torch.cuda.is_available():
        torch.cuda.manual_seed_all(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False


def resolve_device(name: str = "cpu") -> torch.device:
    if name == "cuda" and not torch.cuda.is_available():
        logger.warning("CUDA requested but unavailable, falling back to CPU")
        return torch.device("cpu")
    return torch.device(name)


def make_loader(*arrays: np.ndarray, batch_size: int, seed: int, shuffle: bool = True) -> DataLoader:
    """Shuffled mini-batches over aligned arrays; order depends only on `seed`."""
    if not arrays or len(arrays[0]) == 0:
        raise EmptySplitError("cannot train on an empty split")
    tensors = [torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32)) for a in arrays]
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(TensorDataset(*tensors), batch_size=batch_size, shuffle=shuffle,
                      generator=generator, drop_last=False)


@dataclass
class LossCurve:
    """Per-epoch mean of each named loss."""
    epochs: Dict[str, List[float]] = field(default_factory=dict)

    def record(self, means: Dict[str, float]):
        for name, value in means.items():
            self.epochs.setdefault(name, []).append(float(value))

    def __len__(self) -> int:
        return max((len(v) for v in self.epochs.values()), default=0)

    def first(self, name: str) -> float:
        return self.epochs[name][0]

    def last(self, name: str) -> float:
        return self.epochs[name][-1]

    def last_epoch(self) -> Dict[str, float]:
        return {name: values[-1] for name, values in self.epochs.items() if values}

    def to_dict(self) -> dict:
        return {name: list(values) for name, values in self.epochs.items()}


class EpochMeter:
    """Sample-weighted running means of named losses within one epoch."""

    def __init__(self):
        self._sums: Dict[str, float] = {}
        self._count = 0

    def update(self, batch_size: int, **losses: float):
        self._count += batch_size
        for name, value in losses.items():
            self._sums[name] = self._sums.get(name, 0.0) + float(value) * batch_size

    def means(self) -> Dict[str, float]:
        return {name: total / self._count for name, total in self._sums.items()}


def check_finite(value: torch.Tensor, name: str, epoch: int, batch: int, last_good=None):
    """Raise TrainingDivergedError if a loss is NaN or infinite."""
    scalar = float(value.detach())
    if not math.isfinite(scalar):
        logger.error(f"Non-finite {name} ({scalar}) at epoch {epoch}, batch {batch}")
        raise TrainingDivergedError(f"non-finite {name} ({scalar})", epoch, batch, last_good)


def adam(parameters, learning_rate: float, betas) -> torch.optim.Adam:
    return torch.optim.Adam(parameters, lr=learning_rate, betas=tuple(betas))
