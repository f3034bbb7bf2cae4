#!/usr/bin/env python3
"""Run a cyclesem experiment stage.

Usage:
    ./run_experiment.py gen-data --workers 8
    ./run_experiment.py train-seg --set seg.epochs=5
    ./run_experiment.py ablation --out runs/desk
    ./run_experiment.py all              # every stage in order
"""

import sys
from pathlib import Path

# Add project to path
sys.path.insert(0, str(Path(__file__).parent))

from cyclesem.cli import run_subcommand

PIPELINE = (
    ["gen-data"],
    ["train-seg"],
    ["train-synth"],
    ["train-ae"],
    ["ablation"],
    ["infer", "--method", "ae"],
    ["eval", "--method", "ae"],
    ["report"],
)


def main() -> int:
    argv = sys.argv[1:]
    if argv[:1] != ["all"]:
        return run_subcommand(argv)

    shared = argv[1:]
    for stage in PIPELINE:
        print(f"==> {' '.join(stage)}")
        status = run_subcommand(stage + shared)
        if status != 0:
            return status
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(130)
