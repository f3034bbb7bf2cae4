import json
import logging

import pytest

from cyclesem.cli import (
    EXIT_CONFIG,
    EXIT_MISSING_ARTIFACT,
    EXIT_OK,
    EXIT_USAGE,
    OUT_ENV_VAR,
    run_subcommand,
)
from cyclesem.core import Experiment, setup_logging
from cyclesem.errors import MissingArtifactError
from cyclesem.metrics import CSV_COLUMNS

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


@pytest.fixture
def config_file(tmp_path, tiny_experiment):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_experiment.to_dict()))
    return path


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(OUT_ENV_VAR, "")
    monkeypatch.delenv(OUT_ENV_VAR)


def run(config_file, out, *argv):
    return run_subcommand([*argv, "--config", str(config_file), "--out", str(out)])


def run_pipeline(config_file, out):
    for argv in PIPELINE:
        assert run(config_file, out, *argv) == EXIT_OK, argv


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert run_subcommand(["bogus"]) == EXIT_USAGE

    def test_missing_subcommand(self):
        assert run_subcommand([]) == EXIT_USAGE

    def test_invalid_config_value(self, config_file, tmp_path):
        code = run(config_file, tmp_path / "out", "gen-data", "--set", "phantom.resolution=20")
        assert code == EXIT_CONFIG

    def test_unreadable_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_subcommand(["gen-data", "--config", str(bad)]) == EXIT_CONFIG

    def test_eval_before_infer(self, config_file, tmp_path):
        assert run(config_file, tmp_path / "out", "eval") == EXIT_MISSING_ARTIFACT

    def test_missing_residuals_name_their_directory(self, tiny_experiment, tmp_path):
        experiment = Experiment(tiny_experiment, tmp_path / "out")
        with pytest.raises(MissingArtifactError) as exc:
            experiment.evaluate("cycle", "continuous", "test")
        assert exc.value.path == tmp_path / "out" / "residuals" / "cycle-continuous" / "test"

    def test_train_before_gen_data(self, config_file, tmp_path):
        assert run(config_file, tmp_path / "out", "train-seg") == EXIT_MISSING_ARTIFACT

    def test_infer_before_training(self, config_file, tmp_path):
        out = tmp_path / "out"
        assert run(config_file, out, "gen-data") == EXIT_OK
        assert run(config_file, out, "infer") == EXIT_MISSING_ARTIFACT

    def test_report_before_eval(self, config_file, tmp_path):
        assert run(config_file, tmp_path / "out", "report") == EXIT_MISSING_ARTIFACT


class TestOutputDirectory:
    def test_env_var_used_without_out_flag(self, config_file, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_ENV_VAR, str(tmp_path / "from-env"))
        assert run_subcommand(["gen-data", "--config", str(config_file)]) == EXIT_OK
        assert (tmp_path / "from-env" / "data" / "train" / "manifest.json").exists()
        assert not (tmp_path / "run").exists()

    def test_out_flag_beats_env_var(self, config_file, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_ENV_VAR, str(tmp_path / "from-env"))
        assert run(config_file, tmp_path / "from-flag", "gen-data") == EXIT_OK
        assert (tmp_path / "from-flag" / "data").is_dir()
        assert not (tmp_path / "from-env").exists()

    def test_env_file_in_working_directory(self, config_file, tmp_path):
        (tmp_path / ".cyclesem-env").write_text(f"{OUT_ENV_VAR}={tmp_path / 'from-file'}\n")
        assert run_subcommand(["gen-data", "--config", str(config_file)]) == EXIT_OK
        assert (tmp_path / "from-file" / "data").is_dir()

    def test_config_output_dir_is_the_fallback(self, config_file, tmp_path):
        assert run_subcommand(["gen-data", "--config", str(config_file)]) == EXIT_OK
        assert (tmp_path / "run" / "data" / "provenance.json").exists()
        assert (tmp_path / "run" / "logs" / "cyclesem.log").exists()


class TestPipeline:
    def test_artifacts(self, config_file, tmp_path):
        out = tmp_path / "out"
        run_pipeline(config_file, out)

        lines = (out / "reports" / "ablation.csv").read_text().splitlines()
        assert lines[0] == "mode,auprc,best_dice"
        assert [line.split(",")[0] for line in lines[1:]] == ["continuous", "discrete"]

        for name in ("cycle-continuous_test.json", "cycle-discrete_test.json", "ae_test.json"):
            report = json.loads((out / "eval" / name).read_text())
            assert 0.0 <= report["auprc"] <= 1.0
            assert 0.0 <= report["best_dice"] <= 1.0
            table = (out / "eval" / name.replace(".json", ".csv")).read_text().splitlines()
            assert table[0].split(",") == list(CSV_COLUMNS)
            assert len(table) == 2

        comparison = (out / "reports" / "comparison.csv").read_text().splitlines()
        assert len(comparison) == 4
        stats = json.loads((out / "reports" / "posterior_stats.json").read_text())
        assert "LES" in stats["means"]
        assert (out / "reports" / "grid_test.png").exists()
        for stage in ("data", "checkpoints", "eval", "reports"):
            assert (out / stage / "provenance.json").exists()
        assert (out / "checkpoints" / "segmentor.pt").exists()
        assert (out / "checkpoints" / "generator.json").exists()

    def test_rerun_is_identical(self, config_file, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        run_pipeline(config_file, first)
        run_pipeline(config_file, second)
        for name in ("cycle-continuous_test.json", "cycle-discrete_test.json", "ae_test.json"):
            assert (first / "eval" / name).read_bytes() == (second / "eval" / name).read_bytes()
        assert (first / "reports" / "ablation.csv").read_bytes() == (second / "reports" / "ablation.csv").read_bytes()

    def test_reinfer_overwrites_in_place(self, config_file, tmp_path):
        out = tmp_path / "out"
        run_pipeline(config_file, out)
        before = (out / "eval" / "ae_test.json").read_bytes()
        assert run(config_file, out, "infer", "--method", "ae") == EXIT_OK
        assert run(config_file, out, "eval", "--method", "ae") == EXIT_OK
        assert (out / "eval" / "ae_test.json").read_bytes() == before


class TestLogging:
    @pytest.fixture
    def restore_logging(self):
        root = logging.getLogger()
        handlers, level = list(root.handlers), root.level
        pil_level = logging.getLogger("PIL").level
        yield
        for handler in root.handlers:
            if handler not in handlers:
                handler.close()
        root.handlers[:] = handlers
        root.setLevel(level)
        logging.getLogger("PIL").setLevel(pil_level)

    def test_importing_report_leaves_pil_logger_alone(self, restore_logging):
        import importlib

        import cyclesem.report

        logging.getLogger("PIL").setLevel(logging.NOTSET)
        importlib.reload(cyclesem.report)
        assert logging.getLogger("PIL").level == logging.NOTSET

    def test_setup_logging_quiets_pil_and_writes_file(self, restore_logging, tmp_path):
        setup_logging(tmp_path / "logs")
        assert logging.getLogger("PIL").level == logging.WARNING
        logging.getLogger("cyclesem.test").info("hello")
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert "hello" in (tmp_path / "logs" / "cyclesem.log").read_text()
