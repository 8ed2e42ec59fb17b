"""Tests for configuration loading and validation."""

import json

import pytest
import yaml

from mv_maxprinciple.config import ExperimentConfig, config_hash, load_config, with_overrides
from mv_maxprinciple.exceptions import ConfigError


def _write_config(tmp_path, data: dict, name: str = "config.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestLoadConfig:
    def test_empty_mapping_uses_defaults(self, tmp_path):
        config = load_config(_write_config(tmp_path, {"problem": {"id": "tp1"}}))
        assert config.problem.id == "tp1"
        assert config.simulation.particles == 2000
        assert config.order_study.steps == 400
        assert config.adjoint.backend == "deterministic"
        assert config.third.variant == "plain"

    def test_nested_sections(self, tmp_path):
        data = {
            "problem": {"id": "tp3", "params": {"gain": 0.7}, "control": {"kind": "linear", "gain": 0.2}},
            "simulation": {"particles": 64, "steps": 20, "x0": [0.3]},
            "spike": {"t0": 0.1, "eps": 0.1, "beta": {"kind": "negate"}},
            "third": {"variant": "symmetrized", "kappa": 4.0},
        }
        config = load_config(_write_config(tmp_path, data))
        assert config.problem.params == {"gain": 0.7}
        assert config.problem.control.gain == 0.2
        assert config.simulation.x0 == [0.3]
        assert config.spike.beta.kind == "negate"
        assert config.third.kappa == 4.0

    def test_yaml_is_accepted(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.dump({"problem": {"id": "tp2"}}))
        assert load_config(path).problem.id == "tp2"

    def test_unknown_keys_are_ignored(self, tmp_path):
        config = load_config(_write_config(tmp_path, {"simulation": {"particles": 10, "colour": "red"}}))
        assert config.simulation.particles == 10

    def test_missing_file_raises(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/file.json")

    def test_not_a_mapping_raises(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)

    def test_unknown_problem_raises(self, tmp_path):
        with pytest.raises(ConfigError, match="problem.id"):
            load_config(_write_config(tmp_path, {"problem": {"id": "tp9"}}))

    def test_custom_problem_needs_factory(self, tmp_path):
        with pytest.raises(ConfigError, match="factory"):
            load_config(_write_config(tmp_path, {"problem": {"id": "custom"}}))

    @pytest.mark.parametrize(
        "section, values, message",
        [
            ("simulation", {"particles": 1}, "particles"),
            ("simulation", {"steps": 0}, "steps"),
            ("simulation", {"horizon": 0.0}, "horizon"),
            ("simulation", {"chaos_replicates": 5, "chaos_sizes": [100]}, "chaos"),
            ("order_study", {"eps_grid": [0.2, 0.1, 0.05]}, "at least 4"),
            ("order_study", {"eps_grid": [0.2, 0.1, 0.1, 0.05]}, "strictly decreasing"),
            ("order_study", {"eps_grid": [0.2, 0.1, 0.05, -0.1]}, "> 0"),
            ("order_study", {"eps_grid": [0.2, 0.15, 0.1, 0.05]}, "decade"),
            ("adjoint", {"backend": "neural"}, "backend"),
            ("adjoint", {"degree": 0}, "degree"),
            ("adjoint", {"ridge": -1.0}, "ridge"),
            ("third", {"variant": "lifted"}, "variant"),
            ("third", {"kappa": 0.0}, "kappa"),
            ("third", {"tol": 0.0}, "tol"),
            ("third", {"max_iter": 0}, "max_iter"),
            ("maxprin", {"u_points": 0}, "u_points"),
            ("logging", {"level": "LOUD"}, "logging.level"),
            ("logging", {"format": "xml"}, "logging.format"),
        ],
    )
    def test_invalid_values_raise(self, tmp_path, section, values, message):
        with pytest.raises(ConfigError, match=message):
            load_config(_write_config(tmp_path, {section: values}))

    def test_spike_outside_horizon_raises(self, tmp_path):
        data = {"spike": {"t0": 0.98, "eps": 0.05}}
        with pytest.raises(ConfigError, match="spike"):
            load_config(_write_config(tmp_path, data))

    def test_unknown_beta_kind_raises(self, tmp_path):
        data = {"spike": {"beta": {"kind": "flip"}}}
        with pytest.raises(ConfigError, match="beta.kind"):
            load_config(_write_config(tmp_path, data))

    def test_env_var_interpolation(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MV_OUT_DIR", "/tmp/runs")
        config = load_config(_write_config(tmp_path, {"output": {"directory": "${MV_OUT_DIR}"}}))
        assert config.output.directory == "/tmp/runs"

    def test_env_var_missing_raises(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SURELY_MISSING_VAR", raising=False)
        with pytest.raises(ConfigError, match="SURELY_MISSING_VAR"):
            load_config(_write_config(tmp_path, {"output": {"directory": "${SURELY_MISSING_VAR}"}}))


class TestConfigHash:
    def test_stable_under_key_reordering(self, tmp_path):
        a = {"simulation": {"particles": 50, "steps": 10}, "problem": {"id": "tp1"}}
        b = {"problem": {"id": "tp1"}, "simulation": {"steps": 10, "particles": 50}}
        ha = config_hash(load_config(_write_config(tmp_path, a, "a.json")))
        hb = config_hash(load_config(_write_config(tmp_path, b, "b.json")))
        assert ha == hb

    def test_changes_with_values(self):
        base = ExperimentConfig()
        assert config_hash(base) != config_hash(with_overrides(base, seed=1))


class TestOverrides:
    def test_replaces_fields(self):
        config = with_overrides(ExperimentConfig(), seed=7, out="elsewhere", workers=3)
        assert config.simulation.seed == 7
        assert config.simulation.workers == 3
        assert config.output.directory == "elsewhere"

    def test_none_keeps_values(self):
        base = ExperimentConfig()
        assert with_overrides(base) == base

    def test_invalid_override_raises(self):
        with pytest.raises(ConfigError, match="workers"):
            with_overrides(ExperimentConfig(), workers=0)
