"""Tests for configuration loading and validation."""

from pathlib import Path

import pytest

from src.config import (
    EXPERIMENTS,
    Config,
    ExperimentConfig,
    load_experiment_config,
    resolve_out_dir,
)
from src.utils.errors import ConfigError

REPO = Path(__file__).resolve().parent.parent

SAMPLE = """
[experiment]
NAME = reduced-law
SEED = 11
WORKERS = 2
REPLICATES = 500

[environment]
INCREMENT = exact-stable
ALPHA = 1.5
BETA = 0.25
OFFSPRING = linear-fractional
ETA = 1.2

[grid]
N = [512, 2048]
P_RULE = explicit
P = [20, 40]
X = [0, 1, 2]

[thresholds]
KS = 0.2
REQUIRE_TREND = false
"""


@pytest.fixture
def sample_file(tmp_path):
    path = tmp_path / "experiment.ini"
    path.write_text(SAMPLE)
    return path


class TestConfigFile:
    def test_values(self, sample_file):
        cfg = load_experiment_config(str(sample_file))
        assert cfg.name == "reduced-law"
        assert cfg.seed == 11 and cfg.workers == 2 and cfg.replicates == 500
        assert cfg.n_grid == [512, 2048]
        assert cfg.pairs() == [{"n": 512, "p": 20}, {"n": 2048, "p": 40}]
        assert cfg.x_grid == [0.0, 1.0, 2.0]
        assert cfg.ks_threshold == 0.2
        assert cfg.require_trend is False

    def test_environment_section(self, sample_file):
        environment = Config(str(sample_file)).environment
        assert environment == {
            "increment": "exact-stable",
            "alpha": 1.5,
            "beta": 0.25,
            "offspring": "linear-fractional",
            "eta": 1.2,
        }

    def test_defaults(self, sample_file):
        cfg = load_experiment_config(str(sample_file))
        assert cfg.chunk_size == 1000
        assert cfg.fmt == "csv"
        assert cfg.log_level == "INFO"
        assert cfg.q_grid == [8, 16, 32]
        assert cfg.budget == 2_000_000

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            Config(str(tmp_path / "absent.ini"))

    def test_missing_section(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[grid]\nN = [1]\n")
        with pytest.raises(ConfigError):
            Config(str(path))

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nNAME = harmonicity\n[grid]\nN = [1, 2\n")
        with pytest.raises(ConfigError):
            load_experiment_config(str(path))

    def test_bad_number(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nNAME = harmonicity\nSEED = seven\n")
        with pytest.raises(ConfigError):
            load_experiment_config(str(path))

    def test_shipped_configs_load(self):
        names = set()
        for path in sorted((REPO / "configs").glob("*.ini")):
            names.add(load_experiment_config(str(path)).name)
        names.add(load_experiment_config(str(REPO / "config.example.ini")).name)
        assert names == set(EXPERIMENTS)


class TestExperimentConfig:
    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(name="no-such-run")

    def test_power_rule(self):
        cfg = ExperimentConfig(name="reduced-law", n_grid=[512, 8192], p_gamma=0.5)
        assert [pair["p"] for pair in cfg.pairs()] == [22, 90]

    def test_explicit_rule_length(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(
                name="reduced-law", n_grid=[1, 2, 3], p_rule="explicit", p_values=[1, 2]
            )

    def test_condition_a_warnings(self):
        cfg = ExperimentConfig(
            name="reduced-law", n_grid=[100, 1000], p_rule="explicit", p_values=[50]
        )
        warnings = cfg.condition_a_warnings()
        assert len(warnings) == 1
        assert "50/100" in warnings[0]

    def test_overrides_skip_none(self):
        cfg = ExperimentConfig(name="harmonicity", seed=3)
        updated = cfg.with_overrides(seed=None, workers=4)
        assert updated.seed == 3 and updated.workers == 4

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(name="harmonicity", workers=0)
        with pytest.raises(ConfigError):
            ExperimentConfig(name="harmonicity", fmt="xml")
        with pytest.raises(ConfigError):
            ExperimentConfig(name="harmonicity", p_gamma=1.5)

    def test_out_dir(self):
        cfg = ExperimentConfig(name="t-small", out_dir="runs")
        assert resolve_out_dir(cfg) == Path("runs") / "t-small"
