"""Experiment configuration: dataclass sections loaded from JSON with defaults.

A config file is a JSON object with optional sections::

    {
      "phantom": {"num_train": 2000, "resolution": 64},
      "seg": {"epochs": 30},
      "synth": {"lambda_l1": 10.0},
      "ae": {"bottleneck_dim": 128},
      "semantic_mode": "continuous",
      "output_dir": "runs/default"
    }

Missing keys take the defaults below; unknown keys are rejected. A section whose
seed is left at 0 inherits the top-level `seed`.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Tuple

from .errors import ConfigError

logger = logging.getLogger(__name__)

TISSUE_NAMES = ("background", "GM", "WM", "CSF")

# T2-like contrast: WM darkest, CSF brightest
DEFAULT_TISSUE_MEANS = {"background": 0.0, "GM": 0.5, "WM": 0.35, "CSF": 0.85}

# Lesion intensity ranges; both overlap the bright CSF range
LESION_INTENSITY = {
    "tumor_like": (0.75, 0.95),
    "stroke_like": (0.55, 0.98),
}

SEMANTIC_MODES = ("continuous", "discrete")
DEVICES = ("cpu", "cuda")
INHERIT_SEED = 0
MIN_BOTTLENECK_SIDE = 2


def _check(condition: bool, path: str, message: str):
    if not condition:
        raise ConfigError(path, message)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(path: str, value: Any, default: Any) -> Any:
    """Coerce a JSON value to the type of the field's default."""
    if isinstance(default, bool):
        _check(isinstance(value, bool), path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        _check(_is_int(value), path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        _check(_is_number(value), path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        _check(isinstance(value, str), path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        _check(isinstance(value, (list, tuple)) and len(value) == len(default)
               and all(_is_number(v) for v in value),
               path, f"expected {len(default)} numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, dict):
        _check(isinstance(value, dict), path, f"expected an object, got {value!r}")
        return dict(value)
    if isinstance(default, list):
        _check(isinstance(value, (list, tuple)), path, f"expected a list, got {value!r}")
        return list(value)
    return value


def _section_from_dict(cls, data: Any, prefix: str):
    _check(isinstance(data, dict), prefix, "expected an object")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", "unknown field")
    kwargs = {
        name: _coerce(f"{prefix}.{name}", value, getattr(defaults, name))
        for name, value in data.items()
    }
    return cls(**kwargs)


def _check_optimizer(prefix: str, epochs: int, learning_rate: float, betas: Tuple[float, float],
                     batch_size: int):
    _check(epochs >= 0, f"{prefix}.epochs", "must be >= 0")
    _check(learning_rate > 0, f"{prefix}.learning_rate", "must be > 0")
    _check(all(0.0 < b < 1.0 for b in betas), f"{prefix}.betas", "each beta must lie in (0, 1)")
    _check(batch_size > 0, f"{prefix}.batch_size", "must be > 0")


@dataclass
class PhantomConfig:
    """Synthetic brain-phantom generator settings."""
    seed: int = 0
    resolution: int = 64
    num_train: int = 2000
    num_test: int = 200
    lesion_fraction: float = 0.5
    lesion_style: str = "tumor_like"
    noise_sigma: float = 0.02
    tissue_means: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TISSUE_MEANS))
    blur_radius: float = 1.5
    extra_test_styles: List[str] = field(default_factory=list)

    def validate(self, prefix: str = "phantom") -> "PhantomConfig":
        _check(self.resolution >= 16 and self.resolution % 8 == 0, f"{prefix}.resolution",
               "must be a multiple of 8 and at least 16")
        _check(self.num_train >= 0, f"{prefix}.num_train", "must be >= 0")
        _check(self.num_test >= 0, f"{prefix}.num_test", "must be >= 0")
        _check(0.0 <= self.lesion_fraction <= 1.0, f"{prefix}.lesion_fraction", "must lie in [0, 1]")
        _check(self.noise_sigma >= 0.0, f"{prefix}.noise_sigma", "must be >= 0")
        _check(self.blur_radius >= 0.0, f"{prefix}.blur_radius", "must be >= 0")

        _check(set(self.tissue_means) == set(TISSUE_NAMES), f"{prefix}.tissue_means",
               f"must define exactly {list(TISSUE_NAMES)}")
        for name, mean in self.tissue_means.items():
            _check(_is_number(mean) and 0.0 <= mean <= 1.0, f"{prefix}.tissue_means.{name}",
                   "must lie in [0, 1]")
        m = self.tissue_means
        _check(m["WM"] < m["GM"] < m["CSF"], f"{prefix}.tissue_means", "must be ordered WM < GM < CSF")

        for i, style in enumerate([self.lesion_style] + list(self.extra_test_styles)):
            path = f"{prefix}.lesion_style" if i == 0 else f"{prefix}.extra_test_styles[{i - 1}]"
            _check(style in LESION_INTENSITY, path, f"must be one of {sorted(LESION_INTENSITY)}")
            lo, hi = LESION_INTENSITY[style]
            _check(lo <= m["CSF"] <= hi, f"{prefix}.tissue_means.CSF",
                   f"{style} lesions span [{lo}, {hi}] and must overlap the CSF intensity")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "phantom") -> "PhantomConfig":
        return _section_from_dict(cls, data, prefix)


@dataclass
class SegTrainConfig:
    """Segmentor training settings."""
    epochs: int = 30
    learning_rate: float = 2e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    batch_size: int = 16
    seed: int = 0
    depth: int = 3
    base_channels: int = 16

    def validate(self, prefix: str = "seg") -> "SegTrainConfig":
        _check_optimizer(prefix, self.epochs, self.learning_rate, self.betas, self.batch_size)
        _check(self.depth >= 1, f"{prefix}.depth", "must be >= 1")
        _check(self.base_channels >= 1, f"{prefix}.base_channels", "must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "seg") -> "SegTrainConfig":
        return _section_from_dict(cls, data, prefix)


@dataclass
class SynthTrainConfig:
    """Synthesis (conditional GAN) training settings."""
    epochs: int = 15
    lambda_l1: float = 10.0
    learning_rate: float = 2e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    batch_size: int = 16
    seed: int = 0
    gen_channels: int = 32
    disc_channels: int = 32
    res_blocks: int = 2

    def validate(self, prefix: str = "synth") -> "SynthTrainConfig":
        _check_optimizer(prefix, self.epochs, self.learning_rate, self.betas, self.batch_size)
        _check(self.lambda_l1 >= 0.0, f"{prefix}.lambda_l1", "must be >= 0")
        _check(self.gen_channels >= 1, f"{prefix}.gen_channels", "must be >= 1")
        _check(self.disc_channels >= 1, f"{prefix}.disc_channels", "must be >= 1")
        _check(self.res_blocks >= 0, f"{prefix}.res_blocks", "must be >= 0")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "synth") -> "SynthTrainConfig":
        return _section_from_dict(cls, data, prefix)


@dataclass
class AETrainConfig:
    """Autoencoder baseline settings; optimizer fields mirror SegTrainConfig."""
    epochs: int = 30
    learning_rate: float = 2e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    batch_size: int = 16
    seed: int = 0
    bottleneck_dim: int = 128
    base_channels: int = 16

    def validate(self, prefix: str = "ae") -> "AETrainConfig":
        _check_optimizer(prefix, self.epochs, self.learning_rate, self.betas, self.batch_size)
        _check(self.bottleneck_dim >= 1, f"{prefix}.bottleneck_dim", "must be >= 1")
        _check(self.base_channels >= 1, f"{prefix}.base_channels", "must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "ae") -> "AETrainConfig":
        return _section_from_dict(cls, data, prefix)


_SECTIONS = {
    "phantom": PhantomConfig,
    "seg": SegTrainConfig,
    "synth": SynthTrainConfig,
    "ae": AETrainConfig,
}

_TOP_LEVEL_DEFAULTS = {
    "semantic_mode": "continuous",
    "output_dir": "runs/default",
    "seed": 0,
    "deterministic": True,
    "device": "cpu",
    "median_filter": 0,
    "report_slices": 4,
}


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs."""
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    seg: SegTrainConfig = field(default_factory=SegTrainConfig)
    synth: SynthTrainConfig = field(default_factory=SynthTrainConfig)
    ae: AETrainConfig = field(default_factory=AETrainConfig)
    semantic_mode: str = "continuous"
    output_dir: str = "runs/default"
    seed: int = 0
    deterministic: bool = True
    device: str = "cpu"
    median_filter: int = 0
    report_slices: int = 4

    def __post_init__(self):
        for name in ("phantom", "seg", "synth", "ae"):
            section = getattr(self, name)
            if section.seed == INHERIT_SEED:
                setattr(self, name, replace(section, seed=self.seed))

    def validate(self) -> "ExperimentConfig":
        self.phantom.validate("phantom")
        self.seg.validate("seg")
        self.synth.validate("synth")
        self.ae.validate("ae")
        _check(self.semantic_mode in SEMANTIC_MODES, "semantic_mode", f"must be one of {list(SEMANTIC_MODES)}")
        _check(self.device in DEVICES, "device", f"must be one of {list(DEVICES)}")
        _check(bool(self.output_dir), "output_dir", "must not be empty")
        _check(self.median_filter == 0 or (self.median_filter >= 3 and self.median_filter % 2 == 1),
               "median_filter", "must be 0 (off) or an odd window size >= 3")
        _check(self.report_slices >= 0, "report_slices", "must be >= 0")
        _check(self.phantom.resolution % (2 ** self.seg.depth) == 0, "seg.depth",
               f"resolution {self.phantom.resolution} must be divisible by 2**depth")
        _check(self.phantom.resolution // (2 ** self.seg.depth) >= MIN_BOTTLENECK_SIDE, "seg.depth",
               f"resolution {self.phantom.resolution} leaves a U-Net bottleneck smaller than "
               f"{MIN_BOTTLENECK_SIDE}x{MIN_BOTTLENECK_SIDE}")
        _check(self.phantom.resolution % 8 == 0, "phantom.resolution",
               "must be divisible by 8 for the autoencoder")
        return self

    def to_dict(self) -> dict:
        d = {name: section.to_dict() for name, section in
             (("phantom", self.phantom), ("seg", self.seg), ("synth", self.synth), ("ae", self.ae))}
        for key in _TOP_LEVEL_DEFAULTS:
            d[key] = getattr(self, key)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        _check(isinstance(data, dict), "<root>", "config must be a JSON object")
        unknown = sorted(set(data) - set(_SECTIONS) - set(_TOP_LEVEL_DEFAULTS))
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            if name in data:
                kwargs[name] = section_cls.from_dict(data[name], prefix=name)
        for key, default in _TOP_LEVEL_DEFAULTS.items():
            if key in data:
                kwargs[key] = _coerce(key, data[key], default)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path, overrides: List[str] = None) -> "ExperimentConfig":
        """Defaults, updated by the JSON file at `path` (if given), then by `key=value` overrides."""
        data: Dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError("<file>", f"config file not found: {path}")
            try:
                with open(path, "r") as f:
                    data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError("<file>", f"invalid JSON in {path}: {e}") from e
        for item in overrides or []:
            apply_override(data, item)
        return cls.from_dict(data).validate()

    def fingerprint(self) -> str:
        """sha256 of the resolved config, excluding where artifacts are written."""
        payload = self.to_dict()
        payload.pop("output_dir", None)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def parse_override_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: Dict[str, Any], item: str):
    """Apply one `section.field=value` override to a raw config dict in place."""
    if "=" not in item:
        raise ConfigError(item, "override must look like section.field=value")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(item, "empty override key")
    target = data
    for part in parts[:-1]:
        node = target.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot override inside a non-object value")
        target = node
    target[parts[-1]] = parse_override_value(raw)
