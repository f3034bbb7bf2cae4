import os

import pytest

from cyclesem.config import AETrainConfig, ExperimentConfig, PhantomConfig, SegTrainConfig, SynthTrainConfig
from cyclesem.data.phantom import TEST_SPLIT, TRAIN_SPLIT, build_dataset
from cyclesem.data.records import SplitArrays
from cyclesem.data.store import load_split


def pytest_collection_modifyitems(config, items):
    if os.getenv("CYCLESEM_ACCEPTANCE") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set CYCLESEM_ACCEPTANCE=1 to run acceptance experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_phantom():
    return PhantomConfig(seed=7, resolution=32, num_train=12, num_test=8, lesion_fraction=0.5)


@pytest.fixture
def tiny_dataset(tmp_path, tiny_phantom):
    root = tmp_path / "data"
    build_dataset(tiny_phantom, root)
    return root


@pytest.fixture
def train_arrays(tiny_dataset):
    return SplitArrays.from_records(load_split(tiny_dataset, TRAIN_SPLIT))


@pytest.fixture
def test_records(tiny_dataset):
    return load_split(tiny_dataset, TEST_SPLIT)


@pytest.fixture
def tiny_seg():
    return SegTrainConfig(epochs=2, batch_size=4, seed=3, depth=2, base_channels=4)


@pytest.fixture
def tiny_synth():
    return SynthTrainConfig(epochs=2, batch_size=4, seed=3, gen_channels=4, disc_channels=4, res_blocks=1)


@pytest.fixture
def tiny_ae():
    return AETrainConfig(epochs=2, batch_size=4, seed=3, bottleneck_dim=16, base_channels=4)


@pytest.fixture
def tiny_experiment(tmp_path, tiny_phantom, tiny_seg, tiny_synth, tiny_ae):
    return ExperimentConfig(
        phantom=tiny_phantom,
        seg=tiny_seg,
        synth=tiny_synth,
        ae=tiny_ae,
        output_dir=str(tmp_path / "run"),
        report_slices=2,
    ).validate()
