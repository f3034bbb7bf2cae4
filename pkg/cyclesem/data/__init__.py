"""Dataset records, on-disk format and the synthetic phantom generator."""

from .records import (
    NUM_CLASSES,
    ImageSlice,
    LesionMask,
    LesionStyle,
    Record,
    SplitArrays,
    TissueClass,
    TissueLabelMap,
    onehot_from_probs,
)
from .store import (
    DatasetManifest,
    SplitWriter,
    list_splits,
    load_split,
    read_manifest,
    write_record,
)
from .phantom import (
    TEST_SPLIT,
    TRAIN_SPLIT,
    build_dataset,
    generate_healthy,
    inject_lesion,
    split_name_for_style,
)

__all__ = [
    # Records
    "NUM_CLASSES",
    "ImageSlice",
    "LesionMask",
    "LesionStyle",
    "Record",
    "SplitArrays",
    "TissueClass",
    "TissueLabelMap",
    "onehot_from_probs",
    # Storage
    "DatasetManifest",
    "SplitWriter",
    "list_splits",
    "load_split",
    "read_manifest",
    "write_record",
    # Phantom
    "TEST_SPLIT",
    "TRAIN_SPLIT",
    "build_dataset",
    "generate_healthy",
    "inject_lesion",
    "split_name_for_style",
]
