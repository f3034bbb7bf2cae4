"""Checkpoint format shared by every model.

A checkpoint is two files with a common stem:

    <stem>.pt    torch state_dict (opaque weights)
    <stem>.json  sidecar, schema below

Sidecar schema (version 1)::

    {
      "schema_version": 1,
      "kind": "segmentor" | "generator" | "discriminator" | "autoencoder",
      "architecture": {...},      # constructor arguments, see `architecture()`
      "config": {...},            # training config section
      "epoch": int,               # epochs completed
      "loss": {name: float},      # last-epoch mean losses
      "extra": {...},             # model-specific (e.g. lambda, update schedule)
      "weights_file": "<stem>.pt",
      "weights_sha256": "..."
    }
"""

import io
import json
import logging
from abc import abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Type

import torch
from torch import nn

from ..data.store import atomic_write_bytes, atomic_write_text, canonical_json, sha256_hex
from ..errors import ChecksumMismatchError, MissingArtifactError

logger = logging.getLogger(__name__)

SIDECAR_VERSION = 1

_REGISTRY: Dict[str, Type["CheckpointedModel"]] = {}


def register_model(kind: str):
    """Class decorator making a model loadable from its sidecar `kind`."""
    def wrap(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls
        return cls
    return wrap


class CheckpointedModel(nn.Module):
    """Base for models that can rebuild themselves from an architecture descriptor."""

    kind: str = "model"

    @abstractmethod
    def architecture(self) -> Dict[str, Any]:
        """Constructor keyword arguments that rebuild an identical module."""

    @classmethod
    def from_architecture(cls, architecture: Dict[str, Any]) -> "CheckpointedModel":
        return cls(**architecture)


@dataclass
class CheckpointInfo:
    """Parsed sidecar."""
    kind: str
    architecture: Dict[str, Any]
    config: Dict[str, Any] = field(default_factory=dict)
    epoch: int = 0
    loss: Dict[str, float] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)
    weights_file: str = ""
    weights_sha256: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": SIDECAR_VERSION,
            "kind": self.kind,
            "architecture": self.architecture,
            "config": self.config,
            "epoch": self.epoch,
            "loss": self.loss,
            "extra": self.extra,
            "weights_file": self.weights_file,
            "weights_sha256": self.weights_sha256,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CheckpointInfo":
        return cls(
            kind=data["kind"],
            architecture=data["architecture"],
            config=data.get("config", {}),
            epoch=int(data.get("epoch", 0)),
            loss=data.get("loss", {}),
            extra=data.get("extra", {}),
            weights_file=data["weights_file"],
            weights_sha256=data.get("weights_sha256", ""),
        )


def save_checkpoint(
    model: CheckpointedModel,
    stem: Path,
    config: Optional[dict] = None,
    epoch: int = 0,
    loss: Optional[Dict[str, float]] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write weights then sidecar; returns the sidecar path."""
    stem = Path(stem)
    buffer = io.BytesIO()
    torch.save(model.state_dict(), buffer)
    weights = buffer.getvalue()
    weights_path = stem.with_suffix(".pt")
    atomic_write_bytes(weights_path, weights)

    info = CheckpointInfo(
        kind=model.kind,
        architecture=model.architecture(),
        config=config or {},
        epoch=epoch,
        loss={k: float(v) for k, v in (loss or {}).items()},
        extra=extra or {},
        weights_file=weights_path.name,
        weights_sha256=sha256_hex(weights),
    )
    sidecar = stem.with_suffix(".json")
    atomic_write_text(sidecar, canonical_json(info.to_dict()))
    logger.debug(f"Saved {model.kind} checkpoint at {sidecar} (epoch {epoch})")
    return sidecar


def read_sidecar(stem: Path) -> CheckpointInfo:
    sidecar = Path(stem).with_suffix(".json")
    if not sidecar.exists():
        raise MissingArtifactError(sidecar, "checkpoint")
    with open(sidecar, "r") as f:
        return CheckpointInfo.from_dict(json.load(f))


def load_checkpoint(stem: Path, device: str = "cpu") -> CheckpointedModel:
    """Rebuild a model from its sidecar and load its weights, in eval mode."""
    stem = Path(stem)
    info = read_sidecar(stem)
    if info.kind not in _REGISTRY:
        raise ChecksumMismatchError(f"{stem}: unknown model kind '{info.kind}'")
    weights_path = stem.parent / info.weights_file
    if not weights_path.exists():
        raise MissingArtifactError(weights_path, f"{info.kind} weights")
    weights = weights_path.read_bytes()
    if info.weights_sha256 and sha256_hex(weights) != info.weights_sha256:
        raise ChecksumMismatchError(f"{weights_path}: sha256 does not match sidecar")

    model = _REGISTRY[info.kind].from_architecture(info.architecture)
    state = torch.load(io.BytesIO(weights), map_location=device, weights_only=True)
    model.load_state_dict(state)
    model.to(device)
    model.eval()
    return model
