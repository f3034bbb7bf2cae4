"""In-memory record types: image slices, tissue label maps and lesion masks."""

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional

import numpy as np

from ..errors import DimensionError


PROB_SUM_TOLERANCE = 1e-6


class TissueClass(IntEnum):
    """Tissue classes, in label-plane order."""
    BACKGROUND = 0
    GM = 1   # gray matter
    WM = 2   # white matter
    CSF = 3  # cerebrospinal fluid

    @property
    def label(self) -> str:
        return "background" if self is TissueClass.BACKGROUND else self.name


NUM_CLASSES = len(TissueClass)


class LesionStyle(Enum):
    """Lesion appearance families used by the phantom generator."""
    TUMOR_LIKE = "tumor_like"    # one large bright smooth blob
    STROKE_LIKE = "stroke_like"  # a few small irregular blobs, wider intensity spread


def onehot_from_probs(probs: np.ndarray) -> np.ndarray:
    """Per-pixel argmax one-hot of a (C, H, W) map; ties go to the lowest class index."""
    num_classes = probs.shape[0]
    winners = np.argmax(probs, axis=0)
    return (np.arange(num_classes)[:, None, None] == winners[None]).astype(np.float32)


@dataclass(frozen=True)
class ImageSlice:
    """One 2-D grayscale slice with intensities in [0, 1]."""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 2:
            raise DimensionError(f"image must be 2-D, got shape {pixels.shape}")
        if pixels.shape[0] != pixels.shape[1]:
            raise DimensionError(f"image must be square, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class TissueLabelMap:
    """
    Per-pixel tissue annotation in both forms.

    probs:  (C, H, W) soft class memberships, summing to 1 per pixel
    onehot: (C, H, W) argmax of probs, ties to the lowest class index
    """
    probs: np.ndarray
    onehot: np.ndarray

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        onehot = np.ascontiguousarray(self.onehot, dtype=np.float32)
        if probs.ndim != 3 or probs.shape != onehot.shape:
            raise DimensionError(f"probs {probs.shape} and onehot {onehot.shape} must be matching (C, H, W)")
        if probs.min(initial=0.0) < 0.0:
            raise ValueError("probabilities must be non-negative")
        sums = probs.astype(np.float64).sum(axis=0)
        if np.max(np.abs(sums - 1.0), initial=0.0) > PROB_SUM_TOLERANCE:
            raise ValueError("probabilities must sum to 1 per pixel")
        if not np.array_equal(onehot, onehot_from_probs(probs)):
            raise ValueError("onehot must be the argmax of probs")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "onehot", onehot)

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "TissueLabelMap":
        probs = np.ascontiguousarray(probs, dtype=np.float32)
        return cls(probs=probs, onehot=onehot_from_probs(probs))

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @property
    def resolution(self) -> int:
        return self.probs.shape[1]

    def class_index(self) -> np.ndarray:
        """(H, W) integer class map."""
        return np.argmax(self.onehot, axis=0)


@dataclass(frozen=True)
class LesionMask:
    """Per-pixel anomaly ground truth (True = lesion)."""
    mask: np.ndarray

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {mask.shape}")
        object.__setattr__(self, "mask", mask)

    @classmethod
    def empty(cls, resolution: int) -> "LesionMask":
        return cls(np.zeros((resolution, resolution), dtype=bool))

    @property
    def num_lesion_pixels(self) -> int:
        return int(self.mask.sum())

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()


@dataclass(frozen=True)
class Record:
    """One dataset entry."""
    id: str
    image: ImageSlice
    labels: TissueLabelMap
    mask: Optional[LesionMask] = None

    @property
    def is_lesioned(self) -> bool:
        return self.mask is not None and not self.mask.is_empty


@dataclass(frozen=True)
class SplitArrays:
    """A split stacked into batch arrays, in manifest order."""
    ids: list
    images: np.ndarray   # (N, H, W) float32
    probs: np.ndarray    # (N, C, H, W) float32
    onehot: np.ndarray   # (N, C, H, W) float32
    masks: np.ndarray    # (N, H, W) bool

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_records(cls, records) -> "SplitArrays":
        records = list(records)
        if not records:
            planes = np.zeros((0, NUM_CLASSES, 0, 0), dtype=np.float32)
            return cls(ids=[], images=np.zeros((0, 0, 0), dtype=np.float32), probs=planes,
                       onehot=planes.copy(), masks=np.zeros((0, 0, 0), dtype=bool))
        resolution = records[0].image.resolution
        return cls(
            ids=[r.id for r in records],
            images=np.stack([r.image.pixels for r in records]),
            probs=np.stack([r.labels.probs for r in records]),
            onehot=np.stack([r.labels.onehot for r in records]),
            masks=np.stack([
                r.mask.mask if r.mask is not None else np.zeros((resolution, resolution), dtype=bool)
                for r in records
            ]),
        )
