import json

import numpy as np
import pytest

from cyclesem.config import ExperimentConfig, PhantomConfig, SegTrainConfig, apply_override, parse_override_value
from cyclesem.data.phantom import generate_healthy
from cyclesem.errors import ConfigError


class TestDefaults:
    def test_paper_hyperparameters(self):
        cfg = ExperimentConfig().validate()
        assert cfg.seg.learning_rate == pytest.approx(2e-4)
        assert tuple(cfg.seg.betas) == (0.5, 0.999)
        assert cfg.seg.epochs == 30
        assert cfg.synth.epochs == 15
        assert cfg.synth.lambda_l1 == 10.0
        assert cfg.ae.bottleneck_dim == 128
        assert cfg.semantic_mode == "continuous"
        assert cfg.median_filter == 0

    def test_round_trip_through_dict(self):
        cfg = ExperimentConfig()
        assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


class TestValidation:
    def test_bad_learning_rate_names_field(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.load(None, ["seg.learning_rate=-1"])
        assert exc.value.field_path == "seg.learning_rate"

    def test_unknown_field(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"seg": {"learnin_rate": 0.1}})
        assert "learnin_rate" in exc.value.field_path

    def test_intensity_order_enforced(self):
        cfg = PhantomConfig(tissue_means={"background": 0.0, "GM": 0.3, "WM": 0.5, "CSF": 0.85})
        with pytest.raises(ConfigError) as exc:
            cfg.validate()
        assert exc.value.field_path == "phantom.tissue_means"

    def test_resolution_multiple_of_eight(self):
        with pytest.raises(ConfigError):
            PhantomConfig(resolution=30).validate()

    def test_unknown_lesion_style(self):
        with pytest.raises(ConfigError):
            PhantomConfig(lesion_style="cyst").validate()

    def test_semantic_mode(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.load(None, ["semantic_mode=fuzzy"])
        assert exc.value.field_path == "semantic_mode"

    def test_depth_leaves_room_for_bottleneck(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig(phantom=PhantomConfig(resolution=16), seg=SegTrainConfig(depth=4)).validate()
        assert exc.value.field_path == "seg.depth"
        ExperimentConfig(phantom=PhantomConfig(resolution=16), seg=SegTrainConfig(depth=3)).validate()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)


class TestOverrides:
    def test_parse_values(self):
        assert parse_override_value("5") == 5
        assert parse_override_value("0.5") == 0.5
        assert parse_override_value("true") is True
        assert parse_override_value("discrete") == "discrete"
        assert parse_override_value('["stroke_like"]') == ["stroke_like"]

    def test_nested_override(self):
        data = {}
        apply_override(data, "phantom.num_train=10")
        assert data == {"phantom": {"num_train": 10}}

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seg": {"epochs": 3}, "phantom": {"resolution": 32}}))
        cfg = ExperimentConfig.load(path, ["seg.epochs=4"])
        assert cfg.seg.epochs == 4
        assert cfg.phantom.resolution == 32

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            apply_override({}, "seg.epochs")


class TestFingerprint:
    def test_ignores_output_dir(self):
        a = ExperimentConfig(output_dir="a")
        b = ExperimentConfig(output_dir="b")
        assert a.fingerprint() == b.fingerprint()

    def test_changes_with_hyperparameters(self):
        a = ExperimentConfig()
        b = ExperimentConfig.load(None, ["synth.lambda_l1=0"])
        assert a.fingerprint() != b.fingerprint()


class TestSeeds:
    def test_sections_inherit_global_seed(self):
        cfg = ExperimentConfig(seed=12345)
        assert [cfg.phantom.seed, cfg.seg.seed, cfg.synth.seed, cfg.ae.seed] == [12345] * 4

    def test_explicit_section_seed_wins(self):
        cfg = ExperimentConfig(seed=5, seg=SegTrainConfig(seed=3))
        assert cfg.seg.seed == 3
        assert cfg.phantom.seed == 5

    def test_override_reaches_sections(self):
        cfg = ExperimentConfig.load(None, ["seed=9"])
        assert cfg.synth.seed == 9
        assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()

    def test_global_seed_changes_generated_data(self):
        a = generate_healthy(ExperimentConfig(seed=0).phantom, 0)[0].pixels
        b = generate_healthy(ExperimentConfig(seed=12345).phantom, 0)[0].pixels
        assert not np.array_equal(a, b)
