from pathlib import Path

import pytest

from src.utils.config_loader import SCHEMA, ConfigLoader, ConfigValidationError, load_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


class TestConfigLoader:
    def test_defaults_cover_schema(self):
        config = load_config(None)
        assert set(config.values) == set(SCHEMA)
        assert config.train.vt_to_robot_ratio == (1, 3)
        assert config.data.tasks == ("all",)
        assert config.out_dir == Path("runs") / "default"

    def test_shipped_configs_load(self):
        for path in [CONFIG_DIR / "default.cfg", *sorted((CONFIG_DIR / "experiments").glob("*.cfg"))]:
            load_config(str(path))

    def test_ratio_files(self):
        for name, ratio in (("ratio_1_1", (1, 1)), ("ratio_3_1", (3, 1)), ("ratio_1_3", (1, 3))):
            config = load_config(str(CONFIG_DIR / "experiments" / f"{name}.cfg"))
            assert config.train.vt_to_robot_ratio == ratio

    def test_parse_text(self):
        values = ConfigLoader.parse_text(
            "# comment\nmodel.d_model = 32   # inline\n\ntrain.moe_enabled = off\ntrain.vt_to_robot_ratio = 3:1\n"
        )
        assert values == {"model.d_model": 32, "train.moe_enabled": False, "train.vt_to_robot_ratio": (3, 1)}

    def test_dump_parses_back(self):
        config = load_config(None, ["data.tasks=push_block_box,stack_cubes", "train.learning_rate=0.001"])
        again = ConfigLoader.build({**ConfigLoader.defaults(), **ConfigLoader.parse_text(ConfigLoader.dump(config))})
        assert again == config

    def test_overrides_apply_in_order(self):
        config = load_config(None, ["train.seed=3", "train.seed=9"])
        assert config.train.seed == 9

    def test_vocabulary_size_is_fixed(self):
        assert "model.vocab_size" not in SCHEMA
        assert load_config(None).model.vocab_size == 64

    def test_data_reasoning_flag(self):
        assert not load_config(None).data.with_reasoning
        assert load_config(None, ["data.with_reasoning=true"]).data.with_reasoning

    def test_moe_flag_reaches_model(self):
        config = load_config(None, ["train.moe_enabled=false"])
        assert not config.model.moe_enabled

    def test_environment_overrides_out_dir(self, monkeypatch, tmp_path):
        monkeypatch.setenv("CHATVLA_OUT", str(tmp_path))
        config = load_config(None, ["run.out_dir=elsewhere", "run.name=x"])
        assert config.out_dir == tmp_path / "x"

    @pytest.mark.parametrize(
        "override, message",
        [
            ("model.colour=1", "unknown key"),
            ("model.vocab_size=32", "unknown key"),
            ("model.d_model=wide", "must be of type int"),
            ("train.moe_enabled=maybe", "must be of type bool"),
            ("train.vt_to_robot_ratio=0:1", "must be of type ratio"),
            ("train.vt_to_robot_ratio=3", "must be of type ratio"),
            ("eval.vqa_mode=fuzzy", "must be one of"),
            ("data.image_encoding=png", "must be one of"),
            ("eval.n_trials=0", ">= 1"),
            ("model.n_heads=3", "n_heads"),
            ("no_equals_sign", "key=value"),
        ],
    )
    def test_invalid_values(self, override, message):
        with pytest.raises(ConfigValidationError, match=message):
            load_config(None, [override])

    def test_malformed_line_names_location(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("model.d_model = 16\nthis line is wrong\n")
        with pytest.raises(ConfigValidationError, match="bad.cfg:2"):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigValidationError, match="cannot read"):
            load_config(str(tmp_path / "absent.cfg"))

    def test_validation_error_is_value_error(self):
        assert issubclass(ConfigValidationError, ValueError)
