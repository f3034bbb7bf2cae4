"""Segmentation module: a compact U-Net mapping slices to tissue posteriors."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..config import SegTrainConfig
from ..data.records import NUM_CLASSES, ImageSlice, Record, SplitArrays
from ..errors import EmptySplitError, LossInputError, ModelMismatchError
from ..semantic import SemanticIntermediate, SemanticMode
from .base import CheckpointedModel, register_model, save_checkpoint
from .training import EpochMeter, LossCurve, adam, check_finite, make_loader, resolve_device, seed_everything

logger = logging.getLogger(__name__)

LOG_EPS = 1e-7


def conv_block(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_channels, affine=True),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_channels, affine=True),
        nn.ReLU(inplace=True),
    )


@register_model("segmentor")
class UNet(CheckpointedModel):
    """
    Encoder-decoder with skip connections.

    `depth` is the number of 2x downsamplings; channel width doubles at each
    level starting from `base_channels`. `forward` returns per-pixel class
    scores; `predict_proba` applies the softmax.
    """

    def __init__(self, in_channels: int = 1, num_classes: int = NUM_CLASSES, depth: int = 3,
                 base_channels: int = 16, resolution: int = 64):
        super().__init__()
        if resolution % (2 ** depth) != 0:
            raise ModelMismatchError(f"resolution {resolution} is not divisible by 2**{depth}")
        if resolution // 2 ** depth < 2:
            # InstanceNorm needs more than one spatial element at the bottleneck
            raise ModelMismatchError(f"resolution {resolution} is too small for depth {depth}")
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.depth = depth
        self.base_channels = base_channels
        self.resolution = resolution

        widths = [base_channels * 2 ** i for i in range(depth + 1)]
        self.encoders = nn.ModuleList()
        channels = in_channels
        for width in widths:
            self.encoders.append(conv_block(channels, width))
            channels = width
        self.pool = nn.MaxPool2d(2)
        self.upsamplers = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], kernel_size=2, stride=2) for i in reversed(range(depth))
        )
        self.decoders = nn.ModuleList(conv_block(2 * widths[i], widths[i]) for i in reversed(range(depth)))
        self.head = nn.Conv2d(widths[0], num_classes, kernel_size=1)

    def architecture(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "depth": self.depth,
            "base_channels": self.base_channels,
            "resolution": self.resolution,
        }

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for level, encoder in enumerate(self.encoders):
            x = encoder(x)
            if level < self.depth:
                skips.append(x)
                x = self.pool(x)
        for upsample, decoder, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = decoder(torch.cat([upsample(x), skip], dim=1))
        return self.head(x)

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.forward(x), dim=1)


def _require_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise LossInputError(f"{what}: shape {tuple(a.shape)} vs {tuple(b.shape)}")


def cross_entropy_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = LOG_EPS) -> torch.Tensor:
    """
    Mean over pixels (and batch) of -sum_c target_c * log(pred_c).

    `pred` holds class probabilities along dim -3 and is clipped to [eps, 1]
    before the log. `target` must be one-hot along the same dim.
    """
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target, dtype=pred.dtype, device=pred.device)
    _require_same_shape(pred, target, "cross_entropy_loss")
    if pred.dim() < 3:
        raise LossInputError(f"cross_entropy_loss expects (..., C, H, W), got {tuple(pred.shape)}")
    if not torch.isfinite(pred).all():
        raise LossInputError("cross_entropy_loss: non-finite predictions")
    binary = (target == 0) | (target == 1)
    if not binary.all() or not (target.sum(dim=-3) == 1).all():
        raise LossInputError("cross_entropy_loss: target is not one-hot")
    log_pred = torch.log(pred.clamp(min=eps, max=1.0))
    return -(target * log_pred).sum(dim=-3).mean()


@dataclass
class SegmentorTrainingResult:
    model: UNet
    curve: LossCurve


def _as_split_arrays(split: Union[SplitArrays, Sequence[Record]]) -> SplitArrays:
    return split if isinstance(split, SplitArrays) else SplitArrays.from_records(split)


def train_segmentor(
    split: Union[SplitArrays, Sequence[Record]],
    cfg: SegTrainConfig,
    checkpoint_dir: Optional[Path] = None,
    device: str = "cpu",
    deterministic: bool = True,
) -> SegmentorTrainingResult:
    """Fit S on healthy slices against one-hot tissue labels with Adam."""
    arrays = _as_split_arrays(split)
    if len(arrays) == 0:
        raise EmptySplitError("cannot train the segmentor on an empty split")

    seed_everything(cfg.seed, deterministic)
    dev = resolve_device(device)
    model = UNet(num_classes=arrays.onehot.shape[1], depth=cfg.depth,
                 base_channels=cfg.base_channels, resolution=arrays.images.shape[-1]).to(dev)
    curve = LossCurve()
    if cfg.epochs == 0:
        model.eval()
        return SegmentorTrainingResult(model, curve)

    loader = make_loader(arrays.images[:, None], arrays.onehot, batch_size=cfg.batch_size, seed=cfg.seed)
    optimizer = adam(model.parameters(), cfg.learning_rate, cfg.betas)
    last_good = None

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        meter = EpochMeter()
        for batch, (x, y) in enumerate(loader):
            x, y = x.to(dev), y.to(dev)
            loss = cross_entropy_loss(model.predict_proba(x), y)
            check_finite(loss, "cross-entropy", epoch, batch, last_good)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            meter.update(len(x), ce=loss.item())
        curve.record(meter.means())
        logger.info(f"Segmentor epoch {epoch}/{cfg.epochs}: ce={curve.last('ce'):.5f}")
        if checkpoint_dir is not None:
            last_good = save_checkpoint(model, Path(checkpoint_dir) / f"segmentor_epoch{epoch:03d}",
                                        config=cfg.to_dict(), epoch=epoch, loss=curve.last_epoch())

    model.eval()
    return SegmentorTrainingResult(model, curve)


def _model_device(model: nn.Module) -> torch.device:
    return next(model.parameters()).device


def segment_batch(model: UNet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """(N, H, W) images -> (N, C, H, W) posteriors, in inference mode."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 3 or images.shape[1:] != (model.resolution, model.resolution):
        raise ModelMismatchError(
            f"segmentor expects ({model.resolution}, {model.resolution}) slices, got {images.shape[1:]}"
        )
    model.eval()
    dev = _model_device(model)
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = torch.from_numpy(images[start:start + batch_size, None]).to(dev)
            out.append(model.predict_proba(x).cpu().numpy())
    if not out:
        return np.zeros((0, model.num_classes, model.resolution, model.resolution), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)


def segment(model: UNet, image: ImageSlice) -> SemanticIntermediate:
    """Continuous semantic map S(x) for one slice."""
    if image.resolution != model.resolution:
        raise ModelMismatchError(f"segmentor trained at {model.resolution}px, got {image.resolution}px")
    probs = segment_batch(model, image.pixels[None])[0]
    return SemanticIntermediate(probs, SemanticMode.CONTINUOUS)


def pixel_accuracy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Fraction of pixels whose argmax class matches the one-hot label."""
    return float(np.mean(np.argmax(probs, axis=-3) == np.argmax(onehot, axis=-3)))
