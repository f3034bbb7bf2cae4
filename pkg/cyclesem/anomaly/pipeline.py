"""Cycle inference x -> S(x) -> G(.) and residual scoring.

The anomaly score of a pixel is the raw absolute difference between the input
slice and its reconstruction; no renormalization is applied. An optional
median filter exists for visual inspection and is off unless configured.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.ndimage import median_filter

from ..data.records import ImageSlice, Record, SplitArrays, TissueClass
from ..data.store import (
    MANIFEST_NAME,
    FileEntry,
    atomic_directory,
    atomic_write_text,
    canonical_json,
    read_array,
    write_array,
)
from ..errors import DimensionError, MissingArtifactError, ModelMismatchError
from ..models.segmentor import UNet, segment_batch
from ..models.synthesizer import Generator, synthesize_batch
from ..semantic import SemanticMode, discretize_values

logger = logging.getLogger(__name__)

LESION_KEY = "LES"
RESIDUAL_SUFFIX = ".res"
RECONSTRUCTION_SUFFIX = ".rec"


@dataclass(frozen=True)
class ResidualMap:
    """Per-pixel anomaly scores |x - x_hat|, float32 in [0, 1]."""
    scores: np.ndarray

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float32)
        if scores.ndim != 2:
            raise DimensionError(f"residual map must be 2-D, got shape {scores.shape}")
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise ValueError("residual scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)


def _as_mode(mode: Union[SemanticMode, str]) -> SemanticMode:
    return mode if isinstance(mode, SemanticMode) else SemanticMode(mode)


def _check_pair(s: UNet, g: Generator):
    if s.num_classes != g.num_classes:
        raise ModelMismatchError(f"segmentor emits {s.num_classes} classes, generator expects {g.num_classes}")
    if s.resolution != g.resolution:
        raise ModelMismatchError(f"segmentor resolution {s.resolution} != generator resolution {g.resolution}")


def reconstruct_batch(s: UNet, g: Generator, images: np.ndarray,
                      mode: Union[SemanticMode, str] = SemanticMode.CONTINUOUS) -> np.ndarray:
    """G(S(x)) for a stack of (N, H, W) slices; discrete mode one-hots S(x) first."""
    _check_pair(s, g)
    semantics = segment_batch(s, images)
    if _as_mode(mode) is SemanticMode.DISCRETE:
        semantics = discretize_values(semantics)
    return synthesize_batch(g, semantics)


def reconstruct(s: UNet, g: Generator, x: ImageSlice,
                mode: Union[SemanticMode, str] = SemanticMode.CONTINUOUS) -> ImageSlice:
    return ImageSlice(reconstruct_batch(s, g, x.pixels[None], mode)[0])


def residual_values(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    x_hat = np.asarray(x_hat, dtype=np.float32)
    if x.shape != x_hat.shape:
        raise DimensionError(f"residual: shape {x.shape} vs {x_hat.shape}")
    return np.clip(np.abs(x - x_hat), 0.0, 1.0)


def residual(x: ImageSlice, x_hat: ImageSlice) -> ResidualMap:
    return ResidualMap(residual_values(x.pixels, x_hat.pixels))


def smooth_residual(scores: np.ndarray, size: int) -> np.ndarray:
    """Median-filter residual planes (2-D or stacked 3-D); size 0 returns the input."""
    if size <= 0:
        return scores
    scores = np.asarray(scores, dtype=np.float32)
    footprint = (size, size) if scores.ndim == 2 else (1, size, size)
    return median_filter(scores, size=footprint, mode="nearest").astype(np.float32)


# --- posterior diagnostic ---

@dataclass
class PosteriorStats:
    """Mean segmentor posterior per pixel class; classes with no pixels are absent."""
    means: Dict[str, List[float]] = field(default_factory=dict)
    pixel_counts: Dict[str, int] = field(default_factory=dict)

    def separation(self) -> Dict[str, float]:
        return posterior_separation(self)

    def to_dict(self) -> dict:
        payload = {"means": self.means, "pixel_counts": self.pixel_counts}
        if LESION_KEY in self.means:
            payload["les_l1_distance"] = self.separation()
        return payload


def class_posterior_stats(s: UNet, records: Union[SplitArrays, Sequence[Record]]) -> PosteriorStats:
    """
    Average S(x) over the pixels of each tissue class and over lesion pixels.

    Lesion pixels come from the masks and are left out of the tissue classes.
    """
    arrays = records if isinstance(records, SplitArrays) else SplitArrays.from_records(records)
    num_classes = s.num_classes
    sums = np.zeros((num_classes + 1, num_classes), dtype=np.float64)
    counts = np.zeros(num_classes + 1, dtype=np.int64)

    for start in range(0, len(arrays), 64):
        stop = start + 64
        probs = segment_batch(s, arrays.images[start:stop]).astype(np.float64)
        lesion = arrays.masks[start:stop].astype(bool)
        tissue = np.argmax(arrays.onehot[start:stop], axis=1)
        # group index per pixel: tissue class, or num_classes for lesion
        group = np.where(lesion, num_classes, tissue).ravel()
        flat = probs.transpose(0, 2, 3, 1).reshape(-1, num_classes)
        np.add.at(sums, group, flat)
        counts += np.bincount(group, minlength=num_classes + 1)

    names = [TissueClass(c).label for c in range(num_classes)] + [LESION_KEY]
    stats = PosteriorStats()
    for idx, name in enumerate(names):
        if counts[idx] == 0:
            continue
        stats.means[name] = (sums[idx] / counts[idx]).tolist()
        stats.pixel_counts[name] = int(counts[idx])
    return stats


def posterior_separation(stats: PosteriorStats) -> Dict[str, float]:
    """L1 distance between the lesion mean posterior and each tissue mean posterior."""
    if LESION_KEY not in stats.means:
        return {}
    les = np.asarray(stats.means[LESION_KEY])
    return {
        name: float(np.abs(les - np.asarray(mean)).sum())
        for name, mean in stats.means.items()
        if name != LESION_KEY
    }


# --- residual export ---

@dataclass
class ResidualSet:
    """Residuals and reconstructions for one split, in manifest order."""
    method: str
    mode: str
    split: str
    record_ids: List[str]
    residuals: np.ndarray
    reconstructions: np.ndarray
    meta: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.record_ids)


def write_residuals(directory: Path, residuals: ResidualSet):
    """Write `<id>.res` / `<id>.rec` planes plus a manifest, replacing the directory atomically."""
    directory = Path(directory)
    with atomic_directory(directory) as build:
        records = []
        for i, rid in enumerate(residuals.record_ids):
            res = write_array(build, f"{rid}{RESIDUAL_SUFFIX}", residuals.residuals[i])
            rec = write_array(build, f"{rid}{RECONSTRUCTION_SUFFIX}", residuals.reconstructions[i])
            records.append({"id": rid, "files": {"res": res.to_dict(), "rec": rec.to_dict()}})
        manifest = {
            "method": residuals.method,
            "mode": residuals.mode,
            "split": residuals.split,
            "meta": residuals.meta,
            "records": records,
        }
        atomic_write_text(build / MANIFEST_NAME, canonical_json(manifest))
    logger.info(f"Wrote {len(residuals)} residual maps to {directory}")


def read_residuals(directory: Path, verify: bool = True) -> ResidualSet:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise MissingArtifactError(directory, "residual directory")
    with open(path, "r") as f:
        manifest = json.load(f)
    ids, res, rec = [], [], []
    for record in manifest["records"]:
        ids.append(record["id"])
        res.append(read_array(directory, FileEntry.from_dict(record["files"]["res"]), verify))
        rec.append(read_array(directory, FileEntry.from_dict(record["files"]["rec"]), verify))
    return ResidualSet(
        method=manifest["method"],
        mode=manifest["mode"],
        split=manifest["split"],
        record_ids=ids,
        residuals=np.stack(res) if res else np.zeros((0, 0, 0), dtype=np.float32),
        reconstructions=np.stack(rec) if rec else np.zeros((0, 0, 0), dtype=np.float32),
        meta=manifest.get("meta", {}),
    )


def score_split(reconstructor, arrays: SplitArrays, method: str, mode: str, split: str,
                median_size: int = 0, meta: Optional[dict] = None) -> ResidualSet:
    """Run `reconstructor((N, H, W) images)` over a split and score every slice."""
    reconstructions = reconstructor(arrays.images)
    scores = smooth_residual(residual_values(arrays.images, reconstructions), median_size)
    return ResidualSet(method=method, mode=mode, split=split, record_ids=list(arrays.ids),
                       residuals=scores, reconstructions=reconstructions, meta=meta or {})
