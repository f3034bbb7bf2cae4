"""Models: segmentor S, synthesizer G/D and the autoencoder baseline."""

from .base import CheckpointInfo, CheckpointedModel, load_checkpoint, read_sidecar, save_checkpoint
from .training import LossCurve, seed_everything
from .segmentor import (
    SegmentorTrainingResult,
    UNet,
    cross_entropy_loss,
    pixel_accuracy,
    segment,
    segment_batch,
    train_segmentor,
)
from .synthesizer import (
    Generator,
    PatchDiscriminator,
    SynthTrainingResult,
    adversarial_losses,
    discriminator_loss,
    generator_adversarial_loss,
    generator_objective,
    l1_loss,
    synthesize,
    synthesize_batch,
    train_synthesizer,
)
from .autoencoder import (
    AETrainingResult,
    Autoencoder,
    BottleneckWarning,
    ae_reconstruct,
    ae_reconstruct_batch,
    check_bottleneck,
    train_ae,
)

__all__ = [
    # Checkpoints
    "CheckpointInfo",
    "CheckpointedModel",
    "load_checkpoint",
    "read_sidecar",
    "save_checkpoint",
    # Training
    "LossCurve",
    "seed_everything",
    # Segmentor
    "SegmentorTrainingResult",
    "UNet",
    "cross_entropy_loss",
    "pixel_accuracy",
    "segment",
    "segment_batch",
    "train_segmentor",
    # Synthesizer
    "Generator",
    "PatchDiscriminator",
    "SynthTrainingResult",
    "adversarial_losses",
    "discriminator_loss",
    "generator_adversarial_loss",
    "generator_objective",
    "l1_loss",
    "synthesize",
    "synthesize_batch",
    "train_synthesizer",
    # Autoencoder baseline
    "AETrainingResult",
    "Autoencoder",
    "BottleneckWarning",
    "ae_reconstruct",
    "ae_reconstruct_batch",
    "check_bottleneck",
    "train_ae",
]
