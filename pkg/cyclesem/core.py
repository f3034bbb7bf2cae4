"""Experiment orchestrator: the body of every subcommand.

Output layout under the run directory::

    data/                         phantom dataset (one directory per split)
    checkpoints/<stage>/          per-epoch checkpoints
    checkpoints/<kind>.{pt,json}  final checkpoints used downstream
    residuals/<tag>/<split>/      residual and reconstruction planes
    eval/<tag>_<split>.json       EvalReport
    reports/                      CSV tables, image grids, posterior statistics
    logs/cyclesem.log

Each artifact directory also holds a provenance.json.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .anomaly import (
    ResidualSet,
    class_posterior_stats,
    read_residuals,
    reconstruct_batch,
    score_split,
    write_residuals,
)
from .config import ExperimentConfig
from .data.phantom import TEST_SPLIT, TRAIN_SPLIT, build_dataset
from .data.records import Record, SplitArrays
from .data.store import atomic_write_text, canonical_json, load_split
from .errors import ChecksumMismatchError, MissingArtifactError, UnknownSplitError
from .metrics import EvalReport, evaluate, pool_scores
from .models import (
    ae_reconstruct_batch,
    load_checkpoint,
    save_checkpoint,
    train_ae,
    train_segmentor,
    train_synthesizer,
)
from .models.synthesizer import sidecar_extra
from .models.training import resolve_device
from .report import grid_rows, save_grid, select_report_indices, write_ablation_csv, write_comparison_csv
from .semantic import SemanticMode

logger = logging.getLogger(__name__)

LOG_FILE_NAME = "cyclesem.log"
PROVENANCE_NAME = "provenance.json"

CYCLE = "cycle"
AUTOENCODER = "ae"
METHODS = (CYCLE, AUTOENCODER)
NO_MODE = "none"


def setup_logging(log_dir: Path, level: int = logging.INFO):
    """File log at INFO; console handler only shows warnings so rich output stays readable."""
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_dir / LOG_FILE_NAME),
            logging.StreamHandler(),
        ],
        force=True,
    )
    for handler in logging.root.handlers:
        if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
            handler.setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


def code_fingerprint() -> str:
    """sha256 over the package sources, in sorted path order."""
    package = Path(__file__).parent
    digest = hashlib.sha256()
    for path in sorted(package.rglob("*.py")):
        digest.update(path.relative_to(package).as_posix().encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


def residual_tag(method: str, mode: str) -> str:
    return AUTOENCODER if method == AUTOENCODER else f"{method}-{mode}"


class Experiment:
    """One run directory and the config that produced it."""

    def __init__(self, config: ExperimentConfig, out_dir: Optional[Path] = None):
        self.config = config
        self.out_dir = Path(out_dir if out_dir is not None else config.output_dir)
        self.data_dir = self.out_dir / "data"
        self.checkpoint_dir = self.out_dir / "checkpoints"
        self.residual_root = self.out_dir / "residuals"
        self.eval_dir = self.out_dir / "eval"
        self.report_dir = self.out_dir / "reports"
        self.log_dir = self.out_dir / "logs"

    # --- provenance ---

    def provenance(self) -> dict:
        cfg = self.config
        return {
            "config": cfg.to_dict(),
            "config_fingerprint": cfg.fingerprint(),
            "seeds": {
                "global": cfg.seed,
                "phantom": cfg.phantom.seed,
                "seg": cfg.seg.seed,
                "synth": cfg.synth.seed,
                "ae": cfg.ae.seed,
            },
            "version": __version__,
            "code_fingerprint": code_fingerprint(),
        }

    def write_provenance(self, directory: Path):
        atomic_write_text(Path(directory) / PROVENANCE_NAME, canonical_json(self.provenance()))

    # --- data ---

    def gen_data(self, workers: int = 1) -> Dict[str, int]:
        manifests = build_dataset(self.config.phantom, self.data_dir, workers=workers)
        self.write_provenance(self.data_dir)
        return {split: len(m.record_ids) for split, m in manifests.items()}

    def load_records(self, split: str) -> List[Record]:
        try:
            return load_split(self.data_dir, split)
        except UnknownSplitError:
            raise MissingArtifactError(self.data_dir / split, f"dataset split '{split}' (run gen-data)")

    def load_arrays(self, split: str) -> SplitArrays:
        return SplitArrays.from_records(self.load_records(split))

    # --- training ---

    def _finish_training(self, stage: str, models: dict, curve, config_section: dict, extra: Optional[dict] = None):
        for kind, model in models.items():
            save_checkpoint(model, self.checkpoint_dir / kind, config=config_section,
                            epoch=len(curve), loss=curve.last_epoch(), extra=extra)
        atomic_write_text(self.checkpoint_dir / f"{stage}_curve.json", canonical_json(curve.to_dict()))
        self.write_provenance(self.checkpoint_dir)

    def train_seg(self):
        cfg = self.config
        result = train_segmentor(self.load_arrays(TRAIN_SPLIT), cfg.seg, self.checkpoint_dir / "segmentor",
                                 device=cfg.device, deterministic=cfg.deterministic)
        self._finish_training("segmentor", {"segmentor": result.model}, result.curve, cfg.seg.to_dict())
        return result

    def train_synth(self):
        cfg = self.config
        result = train_synthesizer(self.load_arrays(TRAIN_SPLIT), cfg.synth, self.checkpoint_dir / "synthesizer",
                                   device=cfg.device, deterministic=cfg.deterministic)
        extra = sidecar_extra(cfg.synth)
        self._finish_training("synthesizer",
                              {"generator": result.generator, "discriminator": result.discriminator},
                              result.curve, cfg.synth.to_dict(), extra)
        return result

    def train_ae(self):
        cfg = self.config
        result = train_ae(self.load_arrays(TRAIN_SPLIT), cfg.ae, self.checkpoint_dir / "autoencoder",
                          device=cfg.device, deterministic=cfg.deterministic)
        self._finish_training("autoencoder", {"autoencoder": result.model}, result.curve, cfg.ae.to_dict())
        return result

    def load_model(self, kind: str):
        return load_checkpoint(self.checkpoint_dir / kind, device=str(resolve_device(self.config.device)))

    # --- inference and evaluation ---

    def residual_dir(self, method: str, mode: str, split: str) -> Path:
        return self.residual_root / residual_tag(method, mode) / split

    def _reconstructor(self, method: str, mode: str):
        if method == AUTOENCODER:
            ae = self.load_model("autoencoder")
            return lambda images: ae_reconstruct_batch(ae, images)
        s = self.load_model("segmentor")
        g = self.load_model("generator")
        semantic_mode = SemanticMode(mode)
        return lambda images: reconstruct_batch(s, g, images, semantic_mode)

    def infer(self, method: str = CYCLE, mode: Optional[str] = None, split: str = TEST_SPLIT) -> ResidualSet:
        mode = NO_MODE if method == AUTOENCODER else (mode or self.config.semantic_mode)
        reconstructor = self._reconstructor(method, mode)
        arrays = self.load_arrays(split)
        residuals = score_split(
            reconstructor, arrays, method, mode, split,
            median_size=self.config.median_filter,
            meta={"config_fingerprint": self.config.fingerprint(), "median_filter": self.config.median_filter},
        )
        directory = self.residual_dir(method, mode, split)
        write_residuals(directory, residuals)
        self.write_provenance(directory)
        return residuals

    def evaluate(self, method: str = CYCLE, mode: Optional[str] = None, split: str = TEST_SPLIT) -> EvalReport:
        mode = NO_MODE if method == AUTOENCODER else (mode or self.config.semantic_mode)
        residuals = read_residuals(self.residual_dir(method, mode, split))
        records = self.load_records(split)
        if residuals.record_ids != [r.id for r in records]:
            raise ChecksumMismatchError(
                f"residuals in {self.residual_dir(method, mode, split)} do not match split '{split}'; rerun infer"
            )
        sp = pool_scores(records, residuals.residuals, split=split)
        report = evaluate(sp, method, mode, fingerprint=self.config.fingerprint())
        atomic_write_text(self.eval_dir / f"{residual_tag(method, mode)}_{split}.json", report.to_json())
        atomic_write_text(self.eval_dir / f"{residual_tag(method, mode)}_{split}.csv", report.to_csv())
        self.write_provenance(self.eval_dir)
        return report

    def ablation(self, split: str = TEST_SPLIT) -> Dict[str, EvalReport]:
        """Both semantic modes on the same segmentor and generator."""
        reports = {}
        for mode in (SemanticMode.CONTINUOUS.value, SemanticMode.DISCRETE.value):
            self.infer(CYCLE, mode, split)
            reports[mode] = self.evaluate(CYCLE, mode, split)
        name = "ablation.csv" if split == TEST_SPLIT else f"ablation_{split}.csv"
        write_ablation_csv(self.report_dir / name, reports)
        self.write_provenance(self.report_dir)
        return reports

    # --- reports ---

    def collected_reports(self) -> List[EvalReport]:
        if not self.eval_dir.is_dir():
            return []
        reports = []
        for path in sorted(self.eval_dir.glob("*.json")):
            if path.name == PROVENANCE_NAME:
                continue
            with open(path, "r") as f:
                reports.append(EvalReport.from_dict(json.load(f)))
        return reports

    def report(self, split: str = TEST_SPLIT) -> dict:
        """Comparison table, posterior statistics and image grids for `split`."""
        reports = self.collected_reports()
        if not reports:
            raise MissingArtifactError(self.eval_dir, "evaluation reports (run eval)")
        write_comparison_csv(self.report_dir / "comparison.csv", reports)

        records = self.load_records(split)
        stats = class_posterior_stats(self.load_model("segmentor"), records)
        name = "posterior_stats.json" if split == TEST_SPLIT else f"posterior_stats_{split}.json"
        atomic_write_text(self.report_dir / name, canonical_json(stats.to_dict()))

        grid_path = self._write_grid(split, records)
        self.write_provenance(self.report_dir)
        return {"reports": len(reports), "posterior_stats": stats.to_dict(), "grid": grid_path}

    def _write_grid(self, split: str, records: List[Record]) -> Optional[Path]:
        primary = self.residual_dir(CYCLE, SemanticMode.CONTINUOUS.value, split)
        cont = read_residuals(primary)
        extras = []
        for method, mode in ((CYCLE, SemanticMode.DISCRETE.value), (AUTOENCODER, NO_MODE)):
            directory = self.residual_dir(method, mode, split)
            if directory.exists():
                extras.append(read_residuals(directory))

        masks = [r.mask.mask if r.mask is not None else None for r in records]
        indices = select_report_indices([m if m is not None else [] for m in masks], self.config.report_slices)
        if not indices:
            logger.warning(f"No lesioned slices in '{split}', skipping image grid")
            return None
        rows = [
            grid_rows(records[i].image.pixels,
                      [cont.reconstructions[i]] + [e.reconstructions[i] for e in extras],
                      cont.residuals[i], masks[i])
            for i in indices
        ]
        path = self.report_dir / f"grid_{split}.png"
        save_grid(path, rows)
        return path
