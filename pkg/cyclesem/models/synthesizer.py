"""Synthesis module: conditional GAN translating tissue maps back into images.

The generator G maps a (C, H, W) semantic map to a slice squashed into [0, 1];
the patch discriminator D scores local image patches. Training alternates one
D step and one G step per batch. G minimizes the non-saturating adversarial
loss -log D(G(y)) plus lambda times the L1 distance to the paired real slice.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..config import SynthTrainConfig
from ..data.records import NUM_CLASSES, ImageSlice, Record, SplitArrays
from ..errors import EmptySplitError, LossInputError, ModelMismatchError
from ..semantic import SemanticIntermediate
from .base import CheckpointedModel, register_model, save_checkpoint
from .training import EpochMeter, LossCurve, adam, check_finite, make_loader, resolve_device, seed_everything

logger = logging.getLogger(__name__)

LOG_EPS = 1e-7
UPDATE_SCHEDULE = "1:1"  # discriminator steps : generator steps per batch


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size=3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, kernel_size=3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


@register_model("generator")
class Generator(CheckpointedModel):
    """Encoder, residual blocks, decoder; sigmoid output in [0, 1]."""

    def __init__(self, num_classes: int = NUM_CLASSES, gen_channels: int = 32, res_blocks: int = 2,
                 resolution: int = 64):
        super().__init__()
        self.num_classes = num_classes
        self.gen_channels = gen_channels
        self.res_blocks = res_blocks
        self.resolution = resolution
        ngf = gen_channels
        self.net = nn.Sequential(
            nn.Conv2d(num_classes, ngf, kernel_size=7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(ngf, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(ngf, 2 * ngf, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * ngf, affine=True),
            nn.ReLU(inplace=True),
            *[ResidualBlock(2 * ngf) for _ in range(res_blocks)],
            nn.ConvTranspose2d(2 * ngf, ngf, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(ngf, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(ngf, 1, kernel_size=7, padding=3, padding_mode="reflect"),
            nn.Sigmoid(),
        )

    def architecture(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "gen_channels": self.gen_channels,
            "res_blocks": self.res_blocks,
            "resolution": self.resolution,
        }

    def forward(self, semantic: torch.Tensor) -> torch.Tensor:
        return self.net(semantic)


@register_model("discriminator")
class PatchDiscriminator(CheckpointedModel):
    """Scores overlapping 22x22 patches; outputs lie in (0, 1)."""

    receptive_field = 22

    def __init__(self, disc_channels: int = 32):
        super().__init__()
        self.disc_channels = disc_channels
        ndf = disc_channels
        self.net = nn.Sequential(
            nn.Conv2d(1, ndf, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(ndf, 2 * ndf, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * ndf, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * ndf, 1, kernel_size=4, stride=1, padding=1),
        )

    def architecture(self) -> dict:
        return {"disc_channels": self.disc_channels}

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(image))


def _require_finite(*tensors: torch.Tensor, what: str):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise LossInputError(f"{what}: non-finite input")


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor, eps: float = LOG_EPS) -> torch.Tensor:
    """-mean[log D(x)] - mean[log(1 - D(G(y)))], scores clipped to [eps, 1 - eps]."""
    d_real, d_fake = torch.as_tensor(d_real), torch.as_tensor(d_fake)
    _require_finite(d_real, d_fake, what="discriminator_loss")
    real = d_real.clamp(eps, 1.0 - eps)
    fake = d_fake.clamp(eps, 1.0 - eps)
    return -torch.log(real).mean() - torch.log(1.0 - fake).mean()


def generator_adversarial_loss(d_fake: torch.Tensor, eps: float = LOG_EPS) -> torch.Tensor:
    """Non-saturating generator loss -mean[log D(G(y))]."""
    d_fake = torch.as_tensor(d_fake)
    _require_finite(d_fake, what="generator_adversarial_loss")
    return -torch.log(d_fake.clamp(eps, 1.0 - eps)).mean()


def adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor,
                       eps: float = LOG_EPS) -> Tuple[torch.Tensor, torch.Tensor]:
    """(d_loss, g_adv_loss) from discriminator scores on real and synthesized slices."""
    return discriminator_loss(d_real, d_fake, eps), generator_adversarial_loss(d_fake, eps)


def l1_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between a slice and its synthesis."""
    x = torch.as_tensor(x)
    x_hat = torch.as_tensor(x_hat, dtype=x.dtype, device=x.device)
    if x.shape != x_hat.shape:
        raise LossInputError(f"l1_loss: shape {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).abs().mean()


def generator_objective(g_adv_loss, l1, lambda_l1: float):
    """g_adv_loss + lambda * l1; accepts floats or tensors."""
    for name, value in (("g_adv_loss", g_adv_loss), ("l1", l1), ("lambda", lambda_l1)):
        finite = bool(torch.isfinite(value).all()) if isinstance(value, torch.Tensor) else math.isfinite(value)
        if not finite:
            raise LossInputError(f"generator_objective: non-finite {name}")
    return g_adv_loss + lambda_l1 * l1


@dataclass
class SynthTrainingResult:
    generator: Generator
    discriminator: PatchDiscriminator
    curve: LossCurve


def sidecar_extra(cfg: SynthTrainConfig) -> dict:
    return {"lambda_l1": cfg.lambda_l1, "schedule": UPDATE_SCHEDULE, "generator_loss": "non-saturating"}


def _save_pair(checkpoint_dir: Path, generator: Generator, discriminator: PatchDiscriminator,
               cfg: SynthTrainConfig, epoch: int, loss: dict) -> Path:
    extra = sidecar_extra(cfg)
    save_checkpoint(discriminator, checkpoint_dir / f"discriminator_epoch{epoch:03d}",
                    config=cfg.to_dict(), epoch=epoch, loss=loss, extra=extra)
    return save_checkpoint(generator, checkpoint_dir / f"generator_epoch{epoch:03d}",
                           config=cfg.to_dict(), epoch=epoch, loss=loss, extra=extra)


def train_synthesizer(
    split: Union[SplitArrays, Sequence[Record]],
    cfg: SynthTrainConfig,
    checkpoint_dir: Optional[Path] = None,
    device: str = "cpu",
    deterministic: bool = True,
) -> SynthTrainingResult:
    """Fit G and D on (tissue probability map, slice) pairs from healthy data."""
    arrays = split if isinstance(split, SplitArrays) else SplitArrays.from_records(split)
    if len(arrays) == 0:
        raise EmptySplitError("cannot train the synthesizer on an empty split")

    seed_everything(cfg.seed, deterministic)
    dev = resolve_device(device)
    generator = Generator(num_classes=arrays.probs.shape[1], gen_channels=cfg.gen_channels,
                          res_blocks=cfg.res_blocks, resolution=arrays.images.shape[-1]).to(dev)
    discriminator = PatchDiscriminator(disc_channels=cfg.disc_channels).to(dev)
    curve = LossCurve()
    if cfg.epochs == 0:
        generator.eval()
        discriminator.eval()
        return SynthTrainingResult(generator, discriminator, curve)

    loader = make_loader(arrays.images[:, None], arrays.probs, batch_size=cfg.batch_size, seed=cfg.seed)
    opt_g = adam(generator.parameters(), cfg.learning_rate, cfg.betas)
    opt_d = adam(discriminator.parameters(), cfg.learning_rate, cfg.betas)
    last_good = None
    if checkpoint_dir is not None:
        last_good = _save_pair(Path(checkpoint_dir), generator, discriminator, cfg, 0, {})

    for epoch in range(1, cfg.epochs + 1):
        generator.train()
        discriminator.train()
        meter = EpochMeter()
        for batch, (x, y) in enumerate(loader):
            x, y = x.to(dev), y.to(dev)
            fake = generator(y)

            d_loss = discriminator_loss(discriminator(x), discriminator(fake.detach()))
            check_finite(d_loss, "discriminator loss", epoch, batch, last_good)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            g_adv = generator_adversarial_loss(discriminator(fake))
            l1 = l1_loss(x, fake)
            g_total = generator_objective(g_adv, l1, cfg.lambda_l1)
            check_finite(g_total, "generator objective", epoch, batch, last_good)
            opt_g.zero_grad()
            g_total.backward()
            opt_g.step()

            meter.update(len(x), d_loss=d_loss.item(), g_adv=g_adv.item(), l1=l1.item(), g_total=g_total.item())
        curve.record(meter.means())
        logger.info(
            f"Synthesizer epoch {epoch}/{cfg.epochs}: d={curve.last('d_loss'):.4f} "
            f"g_adv={curve.last('g_adv'):.4f} l1={curve.last('l1'):.5f}"
        )
        if checkpoint_dir is not None:
            last_good = _save_pair(Path(checkpoint_dir), generator, discriminator, cfg, epoch, curve.last_epoch())

    generator.eval()
    discriminator.eval()
    return SynthTrainingResult(generator, discriminator, curve)


def synthesize_batch(generator: Generator, semantics: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """(N, C, H, W) semantic maps -> (N, H, W) slices in [0, 1]."""
    semantics = np.asarray(semantics, dtype=np.float32)
    if semantics.ndim != 4 or semantics.shape[1] != generator.num_classes:
        raise ModelMismatchError(
            f"generator expects {generator.num_classes} semantic channels, got shape {semantics.shape}"
        )
    generator.eval()
    dev = next(generator.parameters()).device
    out = []
    with torch.no_grad():
        for start in range(0, len(semantics), batch_size):
            y = torch.from_numpy(semantics[start:start + batch_size]).to(dev)
            out.append(generator(y)[:, 0].cpu().numpy())
    if not out:
        return np.zeros((0,) + semantics.shape[2:], dtype=np.float32)
    return np.clip(np.concatenate(out), 0.0, 1.0).astype(np.float32)


def synthesize(generator: Generator, semantic: Union[SemanticIntermediate, np.ndarray]) -> ImageSlice:
    """G(semantic) for one map. Accepts any (C, H, W) array, valid probabilities or not."""
    values = semantic.values if isinstance(semantic, SemanticIntermediate) else np.asarray(semantic)
    if values.ndim != 3:
        raise ModelMismatchError(f"semantic map must be (C, H, W), got {values.shape}")
    return ImageSlice(synthesize_batch(generator, values[None])[0])
