"""Command-line surface.

    cyclesem gen-data    [--workers N]
    cyclesem train-seg | train-synth | train-ae
    cyclesem infer       [--method cycle|ae] [--mode continuous|discrete] [--split NAME]
    cyclesem eval        [--method cycle|ae] [--mode continuous|discrete] [--split NAME]
    cyclesem ablation    [--split NAME]
    cyclesem report      [--split NAME]

Every subcommand accepts --config FILE, --set section.field=value (repeatable)
and --out DIR. Exit codes: 0 ok, 1 other failure, 2 bad usage, 3 invalid
config, 4 missing prerequisite artifact.
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from .config import SEMANTIC_MODES, ExperimentConfig
from .core import METHODS, Experiment, setup_logging
from .data.phantom import TEST_SPLIT
from .errors import ConfigError, CycleSemError, MissingArtifactError
from .metrics import EvalReport

console = Console()
err_console = Console(stderr=True)

ENV_FILE = ".cyclesem-env"
OUT_ENV_VAR = "CYCLESEM_OUT"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_ARTIFACT = 4

SUBCOMMANDS = ("gen-data", "train-seg", "train-synth", "train-ae", "infer", "eval", "ablation", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config field, e.g. seg.epochs=5 (repeatable)")
    common.add_argument("--out", type=Path, default=None,
                        help=f"Output directory (default: ${OUT_ENV_VAR}, then the config's output_dir)")

    parser = argparse.ArgumentParser(prog="cyclesem",
                                     description="Anomaly segmentation by image -> semantic -> image cycles")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    gen = sub.add_parser("gen-data", parents=[common], help="Generate the synthetic phantom dataset")
    gen.add_argument("--workers", type=int, default=1, help="Generator processes (output is identical)")

    sub.add_parser("train-seg", parents=[common], help="Train the tissue segmentor")
    sub.add_parser("train-synth", parents=[common], help="Train the semantic-to-image synthesizer")
    sub.add_parser("train-ae", parents=[common], help="Train the autoencoder baseline")

    for name, text in (("infer", "Write residual maps for a split"), ("eval", "Score residual maps")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--method", choices=METHODS, default="cycle")
        p.add_argument("--mode", choices=SEMANTIC_MODES, default=None,
                       help="Semantic intermediate (default: the config's semantic_mode)")
        p.add_argument("--split", default=TEST_SPLIT)

    for name, text in (("ablation", "Continuous vs discrete intermediate on shared models"),
                       ("report", "Comparison table, posterior statistics, image grids")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--split", default=TEST_SPLIT)
    return parser


def resolve_output_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    if args.out is not None:
        return Path(args.out)
    env_out = os.getenv(OUT_ENV_VAR)
    if env_out:
        return Path(env_out)
    return Path(config.output_dir)


def reports_table(title: str, reports: Sequence[EvalReport]) -> Table:
    table = Table(title=title)
    for column in ("method", "mode", "split", "AUPRC", "best DICE", "threshold"):
        table.add_column(column)
    for r in reports:
        table.add_row(r.method, r.mode, r.split, f"{r.auprc:.4f}", f"{r.best_dice:.4f}", f"{r.best_threshold:.4f}")
    return table


def _print_curve(name: str, curve):
    if len(curve) == 0:
        console.print(f"[dim]{name}: 0 epochs, initialized model saved[/dim]")
        return
    losses = ", ".join(f"{k}={v:.5f}" for k, v in curve.last_epoch().items())
    console.print(f"[bold green]{name}[/bold green] trained for {len(curve)} epochs: {losses}")


def dispatch(args: argparse.Namespace, experiment: Experiment):
    command = args.command
    if command == "gen-data":
        counts = experiment.gen_data(workers=args.workers)
        table = Table(title=f"Dataset at {experiment.data_dir}")
        table.add_column("split")
        table.add_column("records", justify="right")
        for split, count in counts.items():
            table.add_row(split, str(count))
        console.print(table)
    elif command == "train-seg":
        _print_curve("Segmentor", experiment.train_seg().curve)
    elif command == "train-synth":
        _print_curve("Synthesizer", experiment.train_synth().curve)
    elif command == "train-ae":
        _print_curve("Autoencoder", experiment.train_ae().curve)
    elif command == "infer":
        residuals = experiment.infer(args.method, args.mode, args.split)
        console.print(f"Wrote {len(residuals)} residual maps to "
                      f"{experiment.residual_dir(residuals.method, residuals.mode, args.split)}")
    elif command == "eval":
        console.print(reports_table("Evaluation", [experiment.evaluate(args.method, args.mode, args.split)]))
    elif command == "ablation":
        reports = experiment.ablation(args.split)
        console.print(reports_table("Semantic intermediate ablation", list(reports.values())))
    elif command == "report":
        summary = experiment.report(args.split)
        console.print(reports_table("Comparison", experiment.collected_reports()))
        separation = summary["posterior_stats"].get("les_l1_distance", {})
        if separation:
            console.print("LES posterior L1 distance: " + ", ".join(f"{k}={v:.3f}" for k, v in separation.items()))
        if summary["grid"] is not None:
            console.print(f"Image grid: {summary['grid']}")


def run_subcommand(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits 0; usage errors exit 2
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    env_file = Path.cwd() / ENV_FILE
    if env_file.exists():
        load_dotenv(env_file)

    try:
        config = ExperimentConfig.load(args.config, args.set)
    except ConfigError as e:
        err_console.print(f"[red]Invalid config[/red] {e}")
        return EXIT_CONFIG

    experiment = Experiment(config, resolve_output_dir(args, config))
    setup_logging(experiment.log_dir)
    try:
        dispatch(args, experiment)
    except MissingArtifactError as e:
        err_console.print(f"[red]Missing prerequisite[/red] {e}")
        return EXIT_MISSING_ARTIFACT
    except ConfigError as e:
        err_console.print(f"[red]Invalid config[/red] {e}")
        return EXIT_CONFIG
    except CycleSemError as e:
        err_console.print(f"[red]Error:[/red] {e}")
        return EXIT_FAILURE
    return EXIT_OK


def main():
    sys.exit(run_subcommand(sys.argv[1:]))
