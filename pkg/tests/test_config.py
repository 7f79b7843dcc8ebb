"""Configuration parsing, validation and round-tripping."""

import math

import pytest
import yaml

from funnelcodesign.config import (
    default_config,
    dump_config,
    load_config,
    parse_config,
)
from funnelcodesign.errors import ConfigError


class TestDefaults:
    def test_pendulum_defaults(self):
        cfg = default_config("pendulum")
        assert cfg.system == "pendulum"
        assert cfg.trajectory.N == 51
        assert cfg.trajectory.x_goal == [math.pi, 0.0]
        assert cfg.model["u_max"] == 2.0
        assert set(cfg.rtc.variables) == {"Q11", "Q22", "R11"}
        assert cfg.rtc.variables["R11"].scale == "log"
        assert set(cfg.rtcd.variables) == {"m", "l"}

    def test_cartpole_defaults(self):
        cfg = default_config("cartpole")
        assert cfg.trajectory.N == 101
        assert len(cfg.trajectory.x0) == 4
        assert cfg.costs.Q == [10.0, 10.0, 1.0, 1.0]

    def test_unknown_system(self):
        with pytest.raises(ConfigError):
            default_config("acrobot")


class TestParseConfig:
    def test_empty_doc_gives_defaults(self):
        cfg = parse_config({"system": "pendulum"})
        assert cfg.trajectory.N == default_config("pendulum").trajectory.N

    def test_overrides_apply(self):
        cfg = parse_config({
            "system": "pendulum",
            "seed": 42,
            "model": {"u_max": 1.2},
            "trajectory": {"N": 81, "t_f": 5.0},
            "costs": {"R": [0.5]},
        })
        assert cfg.seed == 42
        assert cfg.model["u_max"] == 1.2
        assert cfg.trajectory.N == 81
        assert cfg.trajectory.t_f == 5.0
        assert cfg.costs.R == [0.5]
        # untouched sections keep their defaults
        assert cfg.costs.Q == [10.0, 1.0]

    def test_unknown_key_is_named_in_error(self):
        with pytest.raises(ConfigError, match="tarjectory"):
            parse_config({"system": "pendulum", "tarjectory": {}})

    def test_unknown_nested_key_is_named(self):
        with pytest.raises(ConfigError, match="u_maxx"):
            parse_config({"system": "pendulum", "model": {"u_maxx": 3.0}})

    def test_wrong_state_dimension(self):
        with pytest.raises(ConfigError):
            parse_config({"system": "pendulum",
                          "trajectory": {"x0": [0.0, 0.0, 0.0]}})

    def test_negative_mass_rejected(self):
        with pytest.raises(ConfigError, match="model.m"):
            parse_config({"system": "pendulum", "model": {"m": -1.0}})

    def test_non_numeric_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"system": "pendulum", "model": {"u_max": "big"}})

    def test_bool_is_not_an_integer(self):
        with pytest.raises(ConfigError):
            parse_config({"system": "pendulum", "seed": True})

    def test_variable_bounds_validated(self):
        with pytest.raises(ConfigError):
            parse_config({"system": "pendulum",
                          "rtc": {"variables": {"Q11": {"min": 5.0,
                                                        "max": 1.0}}}})

    def test_log_variable_needs_positive_lower(self):
        with pytest.raises(ConfigError):
            parse_config({"system": "pendulum",
                          "rtc": {"variables": {"R11": {"min": -1.0,
                                                        "max": 1.0,
                                                        "scale": "log"}}}})

    def test_non_mapping_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(["system", "pendulum"])


class TestFiles:
    def test_dump_parse_round_trip(self, tmp_path):
        cfg = parse_config({"system": "cartpole", "seed": 9,
                            "funnel": {"budget": 17},
                            "rtc": {"variables": {"R11": {"init": 2.0}}}})
        path = tmp_path / "run.yaml"
        dump_config(cfg, path)
        again = load_config(path)
        assert again == cfg

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_load_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("system: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_load_applies_validation(self, tmp_path):
        path = tmp_path / "bad_key.yaml"
        path.write_text(yaml.safe_dump({"system": "pendulum",
                                        "funnel": {"bugdet": 5}}))
        with pytest.raises(ConfigError, match="bugdet"):
            load_config(path)
