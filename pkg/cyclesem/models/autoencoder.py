"""Dense-bottleneck autoencoder baseline, trained with L1 reconstruction on healthy slices."""

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from ..config import AETrainConfig
from ..data.records import ImageSlice, Record, SplitArrays
from ..errors import EmptySplitError, ModelMismatchError
from .base import CheckpointedModel, register_model, save_checkpoint
from .synthesizer import l1_loss
from .training import EpochMeter, LossCurve, adam, check_finite, make_loader, resolve_device, seed_everything

logger = logging.getLogger(__name__)


class BottleneckWarning(UserWarning):
    """The latent is at least as large as the input: no real compression."""


def check_bottleneck(resolution: int, bottleneck_dim: int) -> bool:
    """Warn and return False when the latent cannot act as a bottleneck."""
    pixels = resolution * resolution
    if bottleneck_dim >= pixels:
        message = f"bottleneck_dim {bottleneck_dim} >= {pixels} input pixels; the autoencoder can copy its input"
        logger.warning(message)
        warnings.warn(message, BottleneckWarning, stacklevel=2)
        return False
    return True


@register_model("autoencoder")
class Autoencoder(CheckpointedModel):
    """Three stride-2 conv stages down to a flat latent of `bottleneck_dim`, mirrored back up."""

    def __init__(self, resolution: int = 64, bottleneck_dim: int = 128, base_channels: int = 16):
        super().__init__()
        if resolution % 8 != 0:
            raise ModelMismatchError(f"autoencoder resolution must be divisible by 8, got {resolution}")
        self.resolution = resolution
        self.bottleneck_dim = bottleneck_dim
        self.base_channels = base_channels
        b = base_channels
        side = resolution // 8
        flat = 4 * b * side * side

        self.encoder = nn.Sequential(
            nn.Conv2d(1, b, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(b, 2 * b, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * b, 4 * b, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * b, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Flatten(),
            nn.Linear(flat, bottleneck_dim),
        )
        self.decoder = nn.Sequential(
            nn.Linear(bottleneck_dim, flat),
            nn.Unflatten(1, (4 * b, side, side)),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(4 * b, 2 * b, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * b, b, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(b, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(b, 1, kernel_size=4, stride=2, padding=1),
            nn.Sigmoid(),
        )

    def architecture(self) -> dict:
        return {
            "resolution": self.resolution,
            "bottleneck_dim": self.bottleneck_dim,
            "base_channels": self.base_channels,
        }

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


@dataclass
class AETrainingResult:
    model: Autoencoder
    curve: LossCurve


def train_ae(
    split: Union[SplitArrays, Sequence[Record]],
    cfg: AETrainConfig,
    checkpoint_dir: Optional[Path] = None,
    device: str = "cpu",
    deterministic: bool = True,
) -> AETrainingResult:
    arrays = split if isinstance(split, SplitArrays) else SplitArrays.from_records(split)
    if len(arrays) == 0:
        raise EmptySplitError("cannot train the autoencoder on an empty split")

    resolution = arrays.images.shape[-1]
    check_bottleneck(resolution, cfg.bottleneck_dim)
    seed_everything(cfg.seed, deterministic)
    dev = resolve_device(device)
    model = Autoencoder(resolution=resolution, bottleneck_dim=cfg.bottleneck_dim,
                        base_channels=cfg.base_channels).to(dev)
    curve = LossCurve()
    if cfg.epochs == 0:
        model.eval()
        return AETrainingResult(model, curve)

    loader = make_loader(arrays.images[:, None], batch_size=cfg.batch_size, seed=cfg.seed)
    optimizer = adam(model.parameters(), cfg.learning_rate, cfg.betas)
    last_good = None

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        meter = EpochMeter()
        for batch, (x,) in enumerate(loader):
            x = x.to(dev)
            loss = l1_loss(x, model(x))
            check_finite(loss, "reconstruction L1", epoch, batch, last_good)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            meter.update(len(x), l1=loss.item())
        curve.record(meter.means())
        logger.info(f"Autoencoder epoch {epoch}/{cfg.epochs}: l1={curve.last('l1'):.5f}")
        if checkpoint_dir is not None:
            last_good = save_checkpoint(model, Path(checkpoint_dir) / f"autoencoder_epoch{epoch:03d}",
                                        config=cfg.to_dict(), epoch=epoch, loss=curve.last_epoch())

    model.eval()
    return AETrainingResult(model, curve)


def ae_reconstruct_batch(model: Autoencoder, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 3 or images.shape[1:] != (model.resolution, model.resolution):
        raise ModelMismatchError(
            f"autoencoder expects ({model.resolution}, {model.resolution}) slices, got {images.shape[1:]}"
        )
    model.eval()
    dev = next(model.parameters()).device
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = torch.from_numpy(images[start:start + batch_size, None]).to(dev)
            out.append(model(x)[:, 0].cpu().numpy())
    if not out:
        return np.zeros((0, model.resolution, model.resolution), dtype=np.float32)
    return np.clip(np.concatenate(out), 0.0, 1.0).astype(np.float32)


def ae_reconstruct(model: Autoencoder, x: ImageSlice) -> ImageSlice:
    if x.resolution != model.resolution:
        raise ModelMismatchError(f"autoencoder trained at {model.resolution}px, got {x.resolution}px")
    return ImageSlice(ae_reconstruct_batch(model, x.pixels[None])[0])
