"""Exception hierarchy shared by every cyclesem module."""

from pathlib import Path
from typing import Optional


class CycleSemError(Exception):
    """Base class for all cyclesem errors."""


class ConfigError(CycleSemError, ValueError):
    """A configuration value is invalid. `field_path` is dotted, e.g. `seg.learning_rate`."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class MissingArtifactError(CycleSemError):
    """A subcommand prerequisite (dataset, checkpoint, residuals) is absent."""

    def __init__(self, path: Path, what: str):
        self.path = Path(path)
        self.what = what
        super().__init__(f"missing {what}: {self.path}")


# --- dataset ---

class DatasetError(CycleSemError):
    """Base class for on-disk dataset problems."""


class DimensionError(DatasetError, ValueError):
    """Arrays that must share a shape do not."""


class DuplicateRecordError(DatasetError, ValueError):
    """A record id was written twice into one manifest."""


class TrainingLesionError(DatasetError, ValueError):
    """A training-split record carries lesion pixels."""


class RecordWriteError(DatasetError, OSError):
    """The filesystem refused a write."""


class UnknownSplitError(DatasetError, KeyError):
    """No manifest exists for the requested split."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown split"


class MissingRecordFileError(DatasetError, FileNotFoundError):
    """A manifest references a file that is not on disk."""


class ChecksumMismatchError(DatasetError):
    """A stored array does not match its manifest checksum or shape."""


class LesionPlacementError(CycleSemError):
    """No acceptable lesion could be placed within the attempt budget."""


# --- models and losses ---

class LossInputError(CycleSemError, ValueError):
    """Loss inputs violate their contract (non-one-hot targets, non-finite values)."""


class ModelMismatchError(CycleSemError, ValueError):
    """Model and input disagree on resolution or class count."""


class TrainingError(CycleSemError):
    """Base class for training failures."""


class EmptySplitError(TrainingError, ValueError):
    """Training was requested on a split with no records."""


class TrainingDivergedError(TrainingError):
    """A loss became non-finite during training."""

    def __init__(self, message: str, epoch: int, batch: int,
                 last_good_checkpoint: Optional[Path] = None):
        self.epoch = epoch
        self.batch = batch
        self.last_good_checkpoint = last_good_checkpoint
        suffix = f" (last good checkpoint: {last_good_checkpoint})" if last_good_checkpoint else ""
        super().__init__(f"{message} at epoch {epoch}, batch {batch}{suffix}")


# --- evaluation ---

class UndefinedMetricError(CycleSemError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""


class MissingMaskError(CycleSemError, ValueError):
    """A record selected for pooling has no lesion mask."""
