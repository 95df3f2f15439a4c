"""Tests for strict INI experiment configuration."""

import pytest

from priorseg.config import (ConfigError, ExperimentConfig, load_config,
                             parse_config, render_config)

MINIMAL = """
[dataset]
count = 8
size = 32

[agent]
subgraph_sizes = 4,8
"""


class TestParsing:
    def test_empty_text_yields_defaults(self):
        cfg = parse_config("")
        assert cfg.dataset.kind == "circles"
        assert cfg.agent.subgraph_sizes == (6, 12, 32)
        assert cfg.training.steps == 5000

    def test_values_are_coerced_by_field_type(self):
        cfg = parse_config("""
[agent]
width = 16
actor_lr = 0.003
normalize_coverage = true
subgraph_sizes = 4, 8, 12

[features]
mode = handcrafted
""")
        assert cfg.agent.width == 16
        assert cfg.agent.actor_lr == pytest.approx(3e-3)
        assert cfg.agent.normalize_coverage is True
        assert cfg.agent.subgraph_sizes == (4, 8, 12)
        assert cfg.features.mode == "handcrafted"

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match=r"\[network\]"):
            parse_config("[network]\nwidth = 3\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="widht"):
            parse_config("[agent]\nwidht = 3\n")

    def test_unparseable_value_rejected(self):
        with pytest.raises(ConfigError, match="width"):
            parse_config("[agent]\nwidth = lots\n")

    def test_bad_bool_rejected(self):
        with pytest.raises(ConfigError, match="normalize_coverage"):
            parse_config("[agent]\nnormalize_coverage = maybe\n")

    def test_syntax_error_rejected(self):
        with pytest.raises(ConfigError, match="syntax"):
            parse_config("width = 3\n")  # key before any section header

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.ini")

    def test_load_reads_file(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(MINIMAL)
        cfg = load_config(path)
        assert cfg.dataset.count == 8
        assert cfg.agent.subgraph_sizes == (4, 8)


class TestValidation:
    def test_bad_dataset_kind(self):
        with pytest.raises(ConfigError, match="dataset.kind"):
            parse_config("[dataset]\nkind = squares\n")

    def test_bad_feature_mode(self):
        with pytest.raises(ConfigError, match="features.mode"):
            parse_config("[features]\nmode = learned\n")

    def test_bad_reward_suite(self):
        with pytest.raises(ConfigError, match="rewards.suite"):
            parse_config("[rewards]\nsuite = triangles\n")

    def test_zero_count_rejected(self):
        with pytest.raises(ConfigError, match="count"):
            parse_config("[dataset]\ncount = 0\n")

    def test_empty_subgraph_sizes_rejected(self):
        with pytest.raises(ConfigError, match="non-empty"):
            parse_config("[agent]\nsubgraph_sizes =\n")

    def test_negative_subgraph_size_rejected(self):
        with pytest.raises(ConfigError, match="positive"):
            parse_config("[agent]\nsubgraph_sizes = 4,-8\n")

    def test_repeated_subgraph_size_rejected(self):
        with pytest.raises(ConfigError, match="repeat"):
            parse_config("[agent]\nsubgraph_sizes = 4,4\n")

    def test_zero_steps_rejected(self):
        with pytest.raises(ConfigError, match="steps"):
            parse_config("[training]\nsteps = 0\n")

    def test_data_dir_skips_generator_checks(self):
        cfg = parse_config("[dataset]\ndata_dir = somewhere\ncount = 0\n")
        assert cfg.dataset.data_dir == "somewhere"


class TestRoundTrip:
    def test_render_parse_round_trip(self):
        cfg = parse_config(MINIMAL)
        cfg.agent.normalize_coverage = True
        again = parse_config(render_config(cfg))
        assert again.to_dict() == cfg.to_dict()

    def test_snapshot_is_stable(self):
        a = parse_config(MINIMAL).snapshot()
        b = parse_config(MINIMAL).snapshot()
        assert a == b
        assert "subgraph_sizes" in a

    def test_defaults_validate(self):
        ExperimentConfig().validate()
