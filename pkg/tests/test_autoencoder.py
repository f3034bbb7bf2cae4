from dataclasses import replace

import numpy as np
import pytest
import torch

from cyclesem.data.records import ImageSlice
from cyclesem.errors import EmptySplitError, ModelMismatchError
from cyclesem.models import Autoencoder, BottleneckWarning, ae_reconstruct, check_bottleneck, train_ae


class TestAutoencoder:
    def test_shape_and_range(self):
        torch.manual_seed(0)
        model = Autoencoder(resolution=32, bottleneck_dim=16, base_channels=4)
        x = ImageSlice(np.random.default_rng(0).uniform(size=(32, 32)).astype(np.float32))
        out = ae_reconstruct(model, x)
        assert out.pixels.shape == (32, 32)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_deterministic(self):
        torch.manual_seed(0)
        model = Autoencoder(resolution=32, bottleneck_dim=16, base_channels=4)
        x = ImageSlice(np.full((32, 32), 0.4, dtype=np.float32))
        np.testing.assert_array_equal(ae_reconstruct(model, x).pixels, ae_reconstruct(model, x).pixels)

    def test_resolution_mismatch(self):
        model = Autoencoder(resolution=32, bottleneck_dim=16, base_channels=4)
        with pytest.raises(ModelMismatchError):
            ae_reconstruct(model, ImageSlice(np.zeros((16, 16), dtype=np.float32)))

    def test_bottleneck_warning(self):
        with pytest.warns(BottleneckWarning):
            assert not check_bottleneck(16, 256)
        assert check_bottleneck(64, 128)


class TestTraining:
    def test_loss_decreases(self, train_arrays, tiny_ae):
        result = train_ae(train_arrays, replace(tiny_ae, epochs=5, learning_rate=2e-3))
        assert result.curve.last("l1") < result.curve.first("l1")

    def test_zero_epochs(self, train_arrays, tiny_ae):
        result = train_ae(train_arrays, replace(tiny_ae, epochs=0))
        assert len(result.curve) == 0
        assert result.model.bottleneck_dim == tiny_ae.bottleneck_dim

    def test_degenerate_bottleneck_warns(self, train_arrays, tiny_ae):
        with pytest.warns(BottleneckWarning):
            train_ae(train_arrays, replace(tiny_ae, epochs=0, bottleneck_dim=32 * 32))

    def test_writes_checkpoints(self, train_arrays, tiny_ae, tmp_path):
        train_ae(train_arrays, replace(tiny_ae, epochs=1), checkpoint_dir=tmp_path)
        assert (tmp_path / "autoencoder_epoch001.pt").exists()
        assert (tmp_path / "autoencoder_epoch001.json").exists()

    def test_empty_split(self, tiny_ae):
        with pytest.raises(EmptySplitError):
            train_ae([], tiny_ae)
