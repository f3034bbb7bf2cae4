"""CSV tables and 8-bit grayscale image grids for experiment reports."""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from PIL import Image

from .data.store import atomic_write_bytes, atomic_write_text
from .metrics import EvalReport

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ("mode", "auprc", "best_dice")
ABLATION_MODES = ("continuous", "discrete")
COMPARISON_COLUMNS = ("method", "mode", "split", "auprc", "best_dice", "best_threshold")
GRID_PADDING = 2


def _format(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(v) for v in row])
    return buffer.getvalue()


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]):
    atomic_write_text(Path(path), csv_text(columns, rows))


def write_ablation_csv(path: Path, reports: Dict[str, EvalReport]):
    """Two rows, continuous then discrete, with AUPRC and best DICE."""
    rows = [(mode, reports[mode].auprc, reports[mode].best_dice) for mode in ABLATION_MODES]
    write_csv(path, ABLATION_COLUMNS, rows)


def write_comparison_csv(path: Path, reports: Sequence[EvalReport]):
    ordered = sorted(reports, key=lambda r: (r.split, r.method, r.mode))
    write_csv(path, COMPARISON_COLUMNS, ([getattr(r, c) for c in COMPARISON_COLUMNS] for r in ordered))


def to_uint8(plane: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to 0..255."""
    return np.round(np.clip(np.asarray(plane, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def image_grid(rows: Sequence[Sequence[np.ndarray]], padding: int = GRID_PADDING) -> Image.Image:
    """Tile equally sized 2-D planes into one grayscale image, black padding between cells."""
    if not rows or not rows[0]:
        raise ValueError("image grid needs at least one cell")
    h, w = np.asarray(rows[0][0]).shape
    num_cols = max(len(r) for r in rows)
    canvas = np.zeros((len(rows) * (h + padding) + padding, num_cols * (w + padding) + padding), dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, plane in enumerate(row):
            top = padding + i * (h + padding)
            left = padding + j * (w + padding)
            canvas[top:top + h, left:left + w] = to_uint8(plane)
    return Image.fromarray(canvas)


def save_grid(path: Path, rows: Sequence[Sequence[np.ndarray]]):
    buffer = io.BytesIO()
    image_grid(rows).save(buffer, format="PNG")
    atomic_write_bytes(Path(path), buffer.getvalue())
    logger.info(f"Saved {len(rows)}-row image grid to {path}")


def grid_rows(image: np.ndarray, reconstructions: List[np.ndarray], residual: np.ndarray,
              mask: Optional[np.ndarray]) -> List[np.ndarray]:
    """Columns: input, each reconstruction, residual, mask."""
    row = [image, *reconstructions, residual]
    if mask is not None:
        row.append(np.asarray(mask, dtype=np.float32))
    return row


def select_report_indices(masks: np.ndarray, count: int) -> List[int]:
    """The first `count` lesioned slices in manifest order."""
    lesioned = [i for i, m in enumerate(masks) if np.any(m)]
    return lesioned[:count]
