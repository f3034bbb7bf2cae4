"""Seeded synthetic brain phantoms with tissue ground truth and injected lesions.

A healthy slice is a randomized ellipse: white-matter interior, a gyrated
gray-matter ring, a thin CSF rim and two ventricle blobs. Contrast is T2-like
(WM < GM < CSF). Tissue probability maps are the one-hot anatomy blurred with
a Gaussian and renormalized, standing in for atlas-derived soft tissue maps.

Every draw comes from `rng.stream_rng(seed, index, stream)`, so a record is a
pure function of (config, index).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..config import LESION_INTENSITY, PhantomConfig
from ..errors import LesionPlacementError
from .records import NUM_CLASSES, ImageSlice, LesionMask, LesionStyle, TissueClass, TissueLabelMap, onehot_from_probs
from .rng import Stream, stream_rng
from .store import DatasetManifest, SplitWriter, atomic_directory

logger = logging.getLogger(__name__)

MAX_LESION_ATTEMPTS = 100
MAX_LESION_BRAIN_FRACTION = 0.5

TRAIN_SPLIT = "train"
TEST_SPLIT = "test"

# Geometry, as fractions of the image side (radii) or of the normalized ellipse radius (rings)
CSF_RIM_INNER = 0.93
GM_RING_INNER = 0.74
TUMOR_RADIUS = (0.08, 0.20)
STROKE_RADIUS = (0.02, 0.08)
STROKE_BLOBS = (1, 3)


def _pixel_grid(n: int) -> Tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:n, 0:n]
    return yy.astype(np.float64), xx.astype(np.float64)


def _anatomy(cfg: PhantomConfig, index: int) -> np.ndarray:
    """(H, W) integer tissue map."""
    n = cfg.resolution
    rng = stream_rng(cfg.seed, index, Stream.ANATOMY)
    yy, xx = _pixel_grid(n)

    cy = (n - 1) / 2 + rng.uniform(-0.03, 0.03) * n
    cx = (n - 1) / 2 + rng.uniform(-0.03, 0.03) * n
    a = rng.uniform(0.36, 0.42) * n
    b = rng.uniform(0.30, 0.37) * n
    theta = rng.uniform(-0.35, 0.35)

    u = (xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)
    v = -(xx - cx) * math.sin(theta) + (yy - cy) * math.cos(theta)
    rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    phi = np.arctan2(v / b, u / a)

    folds = rng.integers(5, 10)
    fold_phase = rng.uniform(0.0, 2 * math.pi)
    fold_depth = rng.uniform(0.02, 0.05)
    gm_inner = GM_RING_INNER + fold_depth * np.sin(folds * phi + fold_phase)

    tissue = np.full((n, n), int(TissueClass.BACKGROUND), dtype=np.int64)
    tissue[rho <= 1.0] = TissueClass.CSF
    tissue[rho <= CSF_RIM_INNER] = TissueClass.GM
    tissue[rho <= gm_inner] = TissueClass.WM

    offset = rng.uniform(0.10, 0.16) * a
    radius_u = rng.uniform(0.06, 0.09) * a
    radius_v = rng.uniform(0.14, 0.22) * b
    for side in (-1.0, 1.0):
        scale = rng.uniform(0.85, 1.15)
        inside = ((u - side * offset) / (radius_u * scale)) ** 2 + (v / (radius_v * scale)) ** 2 <= 1.0
        tissue[inside] = TissueClass.CSF
    return tissue


def _soft_labels(tissue: np.ndarray, blur_radius: float) -> TissueLabelMap:
    hard = (np.arange(NUM_CLASSES)[:, None, None] == tissue[None]).astype(np.float64)
    if blur_radius > 0:
        soft = np.stack([ndimage.gaussian_filter(plane, sigma=blur_radius, mode="nearest") for plane in hard])
        soft = np.clip(soft, 0.0, None)
    else:
        soft = hard
    soft /= soft.sum(axis=0, keepdims=True)
    probs = soft.astype(np.float32)
    return TissueLabelMap(probs=probs, onehot=onehot_from_probs(probs))


def generate_healthy(cfg: PhantomConfig, index: int) -> Tuple[ImageSlice, TissueLabelMap]:
    """Healthy slice and its tissue maps; deterministic in (cfg.seed, index)."""
    cfg.validate()
    tissue = _anatomy(cfg, index)
    labels = _soft_labels(tissue, cfg.blur_radius)

    classes = labels.class_index()
    means = np.array([float(cfg.tissue_means[c.label]) for c in TissueClass], dtype=np.float64)
    pixels = means[classes]
    noise = stream_rng(cfg.seed, index, Stream.NOISE).normal(0.0, cfg.noise_sigma, size=pixels.shape)
    pixels = np.where(classes != TissueClass.BACKGROUND, pixels + noise, pixels)
    pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)
    return ImageSlice(pixels), labels


def _random_brain_pixel(rng: np.random.Generator, brain: np.ndarray) -> Tuple[int, int]:
    ys, xs = np.nonzero(brain)
    k = int(rng.integers(len(ys)))
    return int(ys[k]), int(xs[k])


def _tumor_like(rng: np.random.Generator, brain: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One large smooth blob: (weight in [0, 1], lesion intensity map)."""
    n = brain.shape[0]
    yy, xx = _pixel_grid(n)
    cy, cx = _random_brain_pixel(rng, brain)
    radius = rng.uniform(*TUMOR_RADIUS) * n
    aspect = rng.uniform(0.75, 1.25)
    angle = rng.uniform(0.0, math.pi)
    du = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
    dv = -(xx - cx) * math.sin(angle) + (yy - cy) * math.cos(angle)
    d2 = (du / (radius * aspect)) ** 2 + (dv * aspect / radius) ** 2
    weight = np.clip(1.6 * (1.0 - d2), 0.0, 1.0)
    level = rng.uniform(*LESION_INTENSITY[LesionStyle.TUMOR_LIKE.value])
    return weight, np.full((n, n), level)


def _stroke_like(rng: np.random.Generator, brain: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One to three small irregular blobs with independent intensities."""
    n = brain.shape[0]
    yy, xx = _pixel_grid(n)
    weight = np.zeros((n, n))
    level = np.zeros((n, n))
    lo, hi = LESION_INTENSITY[LesionStyle.STROKE_LIKE.value]
    for _ in range(int(rng.integers(STROKE_BLOBS[0], STROKE_BLOBS[1] + 1))):
        cy, cx = _random_brain_pixel(rng, brain)
        radius = rng.uniform(*STROKE_RADIUS) * n
        lobes = rng.integers(2, 6)
        wobble = rng.uniform(0.15, 0.4)
        phase = rng.uniform(0.0, 2 * math.pi)
        angle = np.arctan2(yy - cy, xx - cx)
        boundary = radius * (1.0 + wobble * np.sin(lobes * angle + phase))
        inside = np.hypot(yy - cy, xx - cx) <= boundary
        inside[cy, cx] = True
        weight[inside] = 1.0
        level[inside] = rng.uniform(lo, hi)
    return weight, level


_LESION_SHAPES = {
    LesionStyle.TUMOR_LIKE: _tumor_like,
    LesionStyle.STROKE_LIKE: _stroke_like,
}


def inject_lesion(
    healthy: Tuple[ImageSlice, TissueLabelMap],
    cfg: PhantomConfig,
    index: int,
    style: Optional[str] = None,
) -> Tuple[ImageSlice, TissueLabelMap, LesionMask]:
    """
    Paint a lesion into a healthy slice.

    Pixels outside the returned mask are untouched and the label maps are
    returned unchanged: labels describe healthy anatomy only.
    """
    image, labels = healthy
    lesion_style = LesionStyle(style or cfg.lesion_style)
    brain = labels.class_index() != TissueClass.BACKGROUND
    brain_area = int(brain.sum())
    if brain_area == 0:
        raise LesionPlacementError(f"slice {index} has no brain pixels")

    rng = stream_rng(cfg.seed, index, Stream.LESION)
    for attempt in range(MAX_LESION_ATTEMPTS):
        weight, level = _LESION_SHAPES[lesion_style](rng, brain)
        weight = weight * brain
        mask = weight > 0
        covered = int(mask.sum())
        if 0 < covered <= MAX_LESION_BRAIN_FRACTION * brain_area:
            break
        logger.debug(f"Slice {index}: lesion covers {covered}/{brain_area} brain pixels, regenerating")
    else:
        raise LesionPlacementError(
            f"slice {index}: no {lesion_style.value} lesion within {MAX_LESION_ATTEMPTS} attempts"
        )
    if attempt > 0:
        logger.warning(f"Slice {index}: lesion placed after {attempt + 1} attempts")

    noise = stream_rng(cfg.seed, index, Stream.LESION_NOISE).normal(0.0, cfg.noise_sigma, size=level.shape)
    lesion = np.clip(level + noise, 0.0, 1.0)
    healthy_pixels = image.pixels.astype(np.float64)
    blended = np.clip((1.0 - weight) * healthy_pixels + weight * lesion, 0.0, 1.0)
    pixels = np.where(mask, blended.astype(np.float32), image.pixels)
    return ImageSlice(pixels), labels, LesionMask(mask)


def split_name_for_style(style: str, cfg: PhantomConfig) -> str:
    return TEST_SPLIT if style == cfg.lesion_style else f"{TEST_SPLIT}_{style}"


def lesioned_test_positions(cfg: PhantomConfig) -> set:
    """Positions within the test split that receive a lesion."""
    count = int(math.floor(cfg.lesion_fraction * cfg.num_test + 0.5))
    order = stream_rng(cfg.seed, 0, Stream.SPLIT).permutation(cfg.num_test)
    return {int(p) for p in order[:count]}


def _make_record(task: Tuple[PhantomConfig, int, Optional[str]]):
    cfg, index, style = task
    healthy = generate_healthy(cfg, index)
    if style is None:
        image, labels = healthy
        return image, labels, LesionMask.empty(cfg.resolution)
    return inject_lesion(healthy, cfg, index, style)


def _generate(tasks: List[tuple], workers: int):
    if workers <= 1 or len(tasks) < 2:
        return map(_make_record, tasks)
    chunk = max(1, len(tasks) // (workers * 4))
    return _ordered_pool_map(tasks, workers, chunk)


def _ordered_pool_map(tasks: List[tuple], workers: int, chunk: int):
    # the pool lives only while the generator is being consumed
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_make_record, tasks, chunksize=chunk)


def _write_split(root: Path, split: str, cfg: PhantomConfig, tasks: List[tuple], ids: List[str],
                 is_training: bool, style: str, workers: int) -> DatasetManifest:
    with SplitWriter(
        root, split,
        resolution=cfg.resolution,
        seed=cfg.seed,
        lesion_style=style,
        is_training=is_training,
        config=cfg.to_dict(),
    ) as writer:
        for record_id, (image, labels, mask) in zip(ids, _generate(tasks, workers)):
            writer.write_record(record_id, image, labels, mask)
    return writer.manifest


def build_dataset(cfg: PhantomConfig, root: Path, workers: int = 1) -> Dict[str, DatasetManifest]:
    """
    Generate a full dataset under `root`: an all-healthy `train` split and a
    `test` split mixing healthy and lesioned slices, plus one `test_<style>`
    split per extra lesion style over the same test anatomy.

    The directory bytes depend only on `cfg`, never on `workers`.
    """
    cfg.validate()
    root = Path(root)
    manifests = {}
    with atomic_directory(root) as build:
        train_tasks = [(cfg, i, None) for i in range(cfg.num_train)]
        train_ids = [f"{TRAIN_SPLIT}_{i:05d}" for i in range(cfg.num_train)]
        manifests[TRAIN_SPLIT] = _write_split(build, TRAIN_SPLIT, cfg, train_tasks, train_ids,
                                              is_training=True, style="none", workers=workers)

        lesioned = lesioned_test_positions(cfg)
        test_ids = [f"{TEST_SPLIT}_{j:05d}" for j in range(cfg.num_test)]
        styles = [cfg.lesion_style] + [s for s in cfg.extra_test_styles if s != cfg.lesion_style]
        for style in dict.fromkeys(styles):
            tasks = [(cfg, cfg.num_train + j, style if j in lesioned else None) for j in range(cfg.num_test)]
            split = split_name_for_style(style, cfg)
            manifests[split] = _write_split(build, split, cfg, tasks, test_ids,
                                            is_training=False, style=style, workers=workers)
    logger.info(f"Built phantom dataset at {root}: {', '.join(f'{k}={len(v.record_ids)}' for k, v in manifests.items())}")
    return manifests
