"""Pixel-pooled evaluation: average precision and best achievable DICE.

A pixel is predicted anomalous at threshold t when its score is >= t. Both
metrics depend only on the ranking of the scores.
"""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, MissingMaskError, UndefinedMetricError

logger = logging.getLogger(__name__)

MAX_EXACT_THRESHOLDS = 10_000
QUANTILE_THRESHOLDS = 1_001


@dataclass
class ScoredPixels:
    """Flat anomaly scores with boolean lesion labels, pooled over a split."""
    scores: np.ndarray
    labels: np.ndarray
    split: str = ""
    slice_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels, dtype=bool).ravel()
        if self.scores.shape != self.labels.shape:
            raise DimensionError(f"{len(self.scores)} scores vs {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def num_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def num_negative(self) -> int:
        return len(self) - self.num_positive


def _require_positives(sp: ScoredPixels, metric: str):
    if sp.num_positive == 0:
        raise UndefinedMetricError(f"{metric} is undefined without lesion pixels")


def _require_both_classes(sp: ScoredPixels, metric: str):
    _require_positives(sp, metric)
    if sp.num_negative == 0:
        raise UndefinedMetricError(f"{metric} is undefined without healthy pixels")


def auprc(sp: ScoredPixels) -> float:
    """
    Average precision: sum over descending score buckets of precision times the
    recall gained in that bucket. Tied scores form a single bucket.
    """
    _require_both_classes(sp, "AUPRC")
    order = np.argsort(-sp.scores, kind="stable")
    scores = sp.scores[order]
    hits = sp.labels[order].astype(np.int64)

    # last index of every run of equal scores
    last = np.ones(len(scores), dtype=bool)
    last[:-1] = scores[:-1] != scores[1:]
    predicted = np.flatnonzero(last) + 1
    tp = np.cumsum(hits)[last]
    gained = np.diff(tp, prepend=0)

    precision = tp / predicted
    return float(np.sum(precision * gained) / sp.num_positive)


def _dice_curve(sp: ScoredPixels, thresholds: np.ndarray) -> np.ndarray:
    """DICE(t) = 2 TP / (predicted positives + P) for each candidate threshold."""
    all_sorted = np.sort(sp.scores)
    pos_sorted = np.sort(sp.scores[sp.labels])
    predicted = len(all_sorted) - np.searchsorted(all_sorted, thresholds, side="left")
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, thresholds, side="left")
    return 2.0 * tp / (predicted + len(pos_sorted))


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Every unique score, or score quantiles when there are too many of them."""
    unique = np.unique(scores)
    if len(unique) <= MAX_EXACT_THRESHOLDS:
        return unique
    return np.unique(np.quantile(scores, np.linspace(0.0, 1.0, QUANTILE_THRESHOLDS), method="lower"))


def best_dice(sp: ScoredPixels) -> Tuple[float, float]:
    """(max DICE, lowest threshold achieving it) over the candidate thresholds."""
    _require_positives(sp, "best DICE")
    thresholds = candidate_thresholds(sp.scores)
    dice = _dice_curve(sp, thresholds)
    best = int(np.flatnonzero(dice == dice.max())[0])
    return float(dice[best]), float(thresholds[best])


def dice_at(sp: ScoredPixels, threshold: float) -> float:
    _require_positives(sp, "DICE")
    return float(_dice_curve(sp, np.asarray([threshold], dtype=np.float64))[0])


# --- brute-force references ---

def auprc_bruteforce(sp: ScoredPixels) -> float:
    """Step-sum AP by direct enumeration of every unique threshold."""
    _require_both_classes(sp, "AUPRC")
    total_pos = sp.num_positive
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(sp.scores.tolist()), reverse=True):
        selected = sp.scores >= t
        tp = int(np.sum(selected & sp.labels))
        recall = tp / total_pos
        ap += (recall - prev_recall) * (tp / int(selected.sum()))
        prev_recall = recall
    return ap


def best_dice_bruteforce(sp: ScoredPixels) -> Tuple[float, float]:
    _require_positives(sp, "best DICE")
    best, best_t = -1.0, None
    for t in sorted(set(sp.scores.tolist())):
        predicted = sp.scores >= t
        tp = int(np.sum(predicted & sp.labels))
        fp = int(np.sum(predicted & ~sp.labels))
        fn = int(np.sum(~predicted & sp.labels))
        dice = 2 * tp / (2 * tp + fp + fn)
        if dice > best:
            best, best_t = dice, t
    return best, best_t


# --- pooling ---

def pool_scores(records: Sequence, residuals: Sequence[Union[np.ndarray, object]], split: str = "") -> ScoredPixels:
    """
    Concatenate residual scores and lesion masks over a split, in record order.

    `residuals` is aligned with `records`; items may be arrays or ResidualMaps.
    Healthy slices contribute pure negatives.
    """
    records = list(records)
    residuals = list(residuals)
    if len(records) != len(residuals):
        raise DimensionError(f"{len(records)} records but {len(residuals)} residual maps")
    scores, labels = [], []
    for record, res in zip(records, residuals):
        if record.mask is None:
            raise MissingMaskError(f"record '{record.id}' has no lesion mask")
        plane = np.asarray(getattr(res, "scores", res))
        if plane.shape != record.mask.mask.shape:
            raise DimensionError(f"{record.id}: residual shape {plane.shape} vs mask {record.mask.mask.shape}")
        scores.append(plane.ravel())
        labels.append(record.mask.mask.ravel())
    if not scores:
        return ScoredPixels(np.zeros(0), np.zeros(0, dtype=bool), split, [])
    return ScoredPixels(np.concatenate(scores), np.concatenate(labels), split, [r.id for r in records])


# --- reports ---

CSV_COLUMNS = (
    "method", "mode", "split", "auprc", "best_dice", "best_threshold",
    "num_pixels", "num_positive", "num_slices", "median_residual_lesion",
    "median_residual_healthy", "config_fingerprint",
)
CSV_SCHEMA_VERSION = 1


@dataclass
class EvalReport:
    method: str
    mode: str
    split: str
    auprc: float
    best_dice: float
    best_threshold: float
    num_pixels: int
    num_positive: int
    num_slices: int
    median_residual_lesion: float
    median_residual_healthy: float
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**{name: data[name] for name in CSV_COLUMNS})

    def csv_row(self) -> List[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in (getattr(self, c) for c in CSV_COLUMNS)]

    def to_csv(self, header: bool = True) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        if header:
            writer.writerow(CSV_COLUMNS)
        writer.writerow(self.csv_row())
        return buffer.getvalue()


def evaluate(sp: ScoredPixels, method: str, mode: str, fingerprint: str = "",
             num_slices: Optional[int] = None) -> EvalReport:
    ap = auprc(sp)
    dice, threshold = best_dice(sp)
    report = EvalReport(
        method=method,
        mode=mode,
        split=sp.split,
        auprc=ap,
        best_dice=dice,
        best_threshold=threshold,
        num_pixels=len(sp),
        num_positive=sp.num_positive,
        num_slices=len(sp.slice_ids) if num_slices is None else num_slices,
        median_residual_lesion=float(np.median(sp.scores[sp.labels])),
        median_residual_healthy=float(np.median(sp.scores[~sp.labels])),
        config_fingerprint=fingerprint,
    )
    logger.info(f"{method}/{mode} on {sp.split}: AUPRC={ap:.4f} best DICE={dice:.4f} at t={threshold:.4f}")
    return report
