"""Counter-based random streams for reproducible phantom generation.

Every random draw in the generator comes from a Philox-4x64 bit generator whose
128-bit key packs (seed, index, stream):

    key = (seed mod 2**64) << 64 | (index << 8) | stream

A stream is fully determined by its key. It never depends on global state or
on the order in which workers draw records.
"""

from enum import IntEnum

import numpy as np


_MAX_INDEX = 1 << 56


class Stream(IntEnum):
    """Independent purposes drawing from one (seed, index) pair."""
    ANATOMY = 0
    NOISE = 1
    LESION = 2
    LESION_NOISE = 3
    SPLIT = 4


def philox_key(seed: int, index: int, stream: Stream) -> int:
    if index < 0 or index >= _MAX_INDEX:
        raise ValueError(f"index must be in [0, 2**56), got {index}")
    return ((int(seed) % (1 << 64)) << 64) | (int(index) << 8) | int(stream)


def stream_rng(seed: int, index: int, stream: Stream) -> np.random.Generator:
    """Fresh generator for one (seed, index, stream) triple."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, index, stream)))
