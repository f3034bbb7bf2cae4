"""On-disk dataset format.

Layout::

    <root>/<split>/manifest.json
    <root>/<split>/<id>.img      float32 (H, W)
    <root>/<split>/<id>.lbl      float32 (C, H, W) probabilities
    <root>/<split>/<id>.onehot   float32 (C, H, W)
    <root>/<split>/<id>.msk      uint8   (H, W), bytes 0/1

Arrays are raw, row-major and little-endian; dtype, shape and sha256 of each
file are recorded in the manifest.
"""

import hashlib
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from ..errors import (
    ChecksumMismatchError,
    DimensionError,
    DuplicateRecordError,
    MissingRecordFileError,
    RecordWriteError,
    TrainingLesionError,
    UnknownSplitError,
)
from .records import NUM_CLASSES, ImageSlice, LesionMask, Record, TissueLabelMap

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

FLOAT_DTYPE = "<f4"
MASK_DTYPE = "|u1"


# --- low-level helpers ---

def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(payload: Any) -> str:
    """Stable JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def atomic_write_bytes(path: Path, data: bytes):
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise RecordWriteError(f"failed to write {path}: {e}") from e


def atomic_write_text(path: Path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


@contextmanager
def atomic_directory(path: Path) -> Iterator[Path]:
    """
    Build a directory next to `path` and swap it into place on success.

    On failure the previous contents of `path` are left untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    build = Path(tempfile.mkdtemp(prefix=f".{path.name}.build-", dir=path.parent))
    try:
        yield build
    except BaseException:
        shutil.rmtree(build, ignore_errors=True)
        raise
    old = None
    if path.exists():
        old = path.parent / f".{path.name}.old-{os.getpid()}"
        shutil.rmtree(old, ignore_errors=True)
        os.replace(path, old)
    os.replace(build, path)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


@dataclass
class FileEntry:
    """Manifest entry for one raw array file."""
    path: str
    dtype: str
    shape: List[int]
    sha256: str

    def to_dict(self) -> dict:
        return {"path": self.path, "dtype": self.dtype, "shape": list(self.shape), "sha256": self.sha256}

    @classmethod
    def from_dict(cls, data: dict) -> "FileEntry":
        return cls(path=data["path"], dtype=data["dtype"], shape=list(data["shape"]), sha256=data["sha256"])


def write_array(directory: Path, name: str, array: np.ndarray, dtype: str = FLOAT_DTYPE) -> FileEntry:
    data = np.ascontiguousarray(array, dtype=np.dtype(dtype)).tobytes(order="C")
    atomic_write_bytes(Path(directory) / name, data)
    return FileEntry(path=name, dtype=dtype, shape=list(array.shape), sha256=sha256_hex(data))


def read_array(directory: Path, entry: FileEntry, verify: bool = True) -> np.ndarray:
    path = Path(directory) / entry.path
    if not path.exists():
        raise MissingRecordFileError(f"record file not found: {path}")
    data = path.read_bytes()
    dtype = np.dtype(entry.dtype)
    expected = int(np.prod(entry.shape)) * dtype.itemsize
    if len(data) != expected:
        raise ChecksumMismatchError(f"{path}: {len(data)} bytes, manifest shape {entry.shape} needs {expected}")
    if verify and sha256_hex(data) != entry.sha256:
        raise ChecksumMismatchError(f"{path}: sha256 does not match manifest")
    # native dtype for downstream numerics; values are preserved bit-for-bit
    return np.frombuffer(data, dtype=dtype).reshape(entry.shape).astype(dtype.newbyteorder("="))


# --- manifests ---

@dataclass
class DatasetManifest:
    """Index of one split: ordered record ids and their files."""
    split: str
    resolution: int
    num_classes: int = NUM_CLASSES
    seed: int = 0
    lesion_style: str = ""
    is_training: bool = False
    record_ids: List[str] = field(default_factory=list)
    files: Dict[str, Dict[str, FileEntry]] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "split": self.split,
            "resolution": self.resolution,
            "num_classes": self.num_classes,
            "seed": self.seed,
            "lesion_style": self.lesion_style,
            "is_training": self.is_training,
            "config": self.config,
            "records": [
                {"id": rid, "files": {kind: e.to_dict() for kind, e in self.files[rid].items()}}
                for rid in self.record_ids
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        records = data.get("records", [])
        manifest = cls(
            split=data["split"],
            resolution=int(data["resolution"]),
            num_classes=int(data.get("num_classes", NUM_CLASSES)),
            seed=int(data.get("seed", 0)),
            lesion_style=data.get("lesion_style", ""),
            is_training=bool(data.get("is_training", False)),
            record_ids=[r["id"] for r in records],
            files={r["id"]: {k: FileEntry.from_dict(v) for k, v in r["files"].items()} for r in records},
            config=data.get("config", {}),
        )
        if len(set(manifest.record_ids)) != len(manifest.record_ids):
            raise ChecksumMismatchError(f"manifest for split '{manifest.split}' lists duplicate record ids")
        return manifest


class SplitWriter:
    """
    Single-writer builder for one split directory.

    Records are written as they arrive; the manifest is written on `close()`
    (or on a clean exit from the `with` block), so an interrupted build never
    leaves a manifest pointing at missing files.
    """

    def __init__(
        self,
        root: Path,
        split: str,
        resolution: int,
        num_classes: int = NUM_CLASSES,
        seed: int = 0,
        lesion_style: str = "",
        is_training: bool = False,
        config: Optional[dict] = None,
    ):
        self.directory = Path(root) / split
        self.manifest = DatasetManifest(
            split=split,
            resolution=resolution,
            num_classes=num_classes,
            seed=seed,
            lesion_style=lesion_style,
            is_training=is_training,
            config=config or {},
        )
        self._closed = False
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise RecordWriteError(f"cannot create split directory {self.directory}: {e}") from e

    def __enter__(self) -> "SplitWriter":
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        return False

    def write_record(
        self,
        record_id: str,
        image: ImageSlice,
        labels: TissueLabelMap,
        mask: Optional[LesionMask] = None,
    ) -> Dict[str, FileEntry]:
        if self._closed:
            raise RecordWriteError(f"split '{self.manifest.split}' is closed for writing")
        if record_id in self.manifest.files:
            raise DuplicateRecordError(f"duplicate record id '{record_id}' in split '{self.manifest.split}'")

        n = self.manifest.resolution
        if image.pixels.shape != (n, n):
            raise DimensionError(f"{record_id}: image shape {image.pixels.shape}, split resolution {n}")
        if labels.probs.shape != (self.manifest.num_classes, n, n):
            raise DimensionError(
                f"{record_id}: label shape {labels.probs.shape}, expected {(self.manifest.num_classes, n, n)}"
            )
        if mask is None:
            mask = LesionMask.empty(n)
        if mask.mask.shape != (n, n):
            raise DimensionError(f"{record_id}: mask shape {mask.mask.shape}, split resolution {n}")
        if self.manifest.is_training and not mask.is_empty:
            raise TrainingLesionError(
                f"{record_id}: training split '{self.manifest.split}' cannot hold "
                f"{mask.num_lesion_pixels} lesion pixels"
            )

        entries = {
            "img": write_array(self.directory, f"{record_id}.img", image.pixels),
            "lbl": write_array(self.directory, f"{record_id}.lbl", labels.probs),
            "onehot": write_array(self.directory, f"{record_id}.onehot", labels.onehot),
            "msk": write_array(self.directory, f"{record_id}.msk", mask.mask.astype(np.uint8), MASK_DTYPE),
        }
        self.manifest.record_ids.append(record_id)
        self.manifest.files[record_id] = entries
        return entries

    def close(self) -> DatasetManifest:
        if not self._closed:
            atomic_write_text(self.directory / MANIFEST_NAME, canonical_json(self.manifest.to_dict()))
            self._closed = True
            logger.info(f"Wrote split '{self.manifest.split}' with {len(self.manifest.record_ids)} records")
        return self.manifest


def write_record(
    writer: SplitWriter,
    record_id: str,
    image: ImageSlice,
    labels: TissueLabelMap,
    mask: Optional[LesionMask] = None,
) -> Dict[str, FileEntry]:
    """Serialize one record into an open split."""
    return writer.write_record(record_id, image, labels, mask)


def read_manifest(root: Path, split: str) -> DatasetManifest:
    path = Path(root) / split / MANIFEST_NAME
    if not path.exists():
        raise UnknownSplitError(f"no manifest for split '{split}' under {root}")
    with open(path, "r") as f:
        return DatasetManifest.from_dict(json.load(f))


def list_splits(root: Path) -> List[str]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / MANIFEST_NAME).exists())


def load_record(directory: Path, manifest: DatasetManifest, record_id: str, verify: bool = True) -> Record:
    entries = manifest.files[record_id]
    n, c = manifest.resolution, manifest.num_classes
    image = read_array(directory, entries["img"], verify)
    probs = read_array(directory, entries["lbl"], verify)
    onehot = read_array(directory, entries["onehot"], verify)
    if image.shape != (n, n) or probs.shape != (c, n, n) or onehot.shape != (c, n, n):
        raise ChecksumMismatchError(f"{record_id}: stored shapes disagree with manifest resolution {n}")
    mask = None
    if "msk" in entries:
        mask = LesionMask(read_array(directory, entries["msk"], verify).astype(bool))
    return Record(
        id=record_id,
        image=ImageSlice(image),
        labels=TissueLabelMap(probs=probs, onehot=onehot),
        mask=mask,
    )


def load_split(root: Path, split: str, verify: bool = True) -> List[Record]:
    """Load every record of a split, in manifest order. Never writes."""
    manifest = read_manifest(root, split)
    directory = Path(root) / split
    return [load_record(directory, manifest, rid, verify) for rid in manifest.record_ids]
