"""Configuration management for simulation experiments."""

import configparser
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from .utils.errors import ConfigError

EXPERIMENTS = (
    "reduced-law",
    "minima-law",
    "survival-asymptotics",
    "t-small",
    "w-constancy",
    "harmonicity",
    "limit-law-routes",
    "meander-marginal",
)

CONDITION_A_RATIO = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run depends on.

    ``to_dict`` is written into the JSON summary, so the summary mirrors
    every field of the run.
    """

    name: str = "limit-law-routes"
    environment: Dict[str, Any] = field(
        default_factory=lambda: {"increment": "gaussian", "sigma": 1.0, "offspring": "geometric"}
    )
    n_grid: List[int] = field(default_factory=lambda: [1024])
    p_rule: str = "power"
    p_values: List[int] = field(default_factory=list)
    p_gamma: float = 0.5
    replicates: int = 10000
    replicas_per_environment: int = 1
    chunk_size: int = 1000
    seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    fmt: str = "csv"
    z0: int = 1
    x_grid: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0])
    q_grid: List[int] = field(default_factory=lambda: [8, 16, 32])
    r_values: List[float] = field(default_factory=lambda: [0.0])
    t_values: List[float] = field(default_factory=lambda: [0.5])
    harmonic_grid: List[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0, 8.0])
    truncation: int = 2000
    n_mc: int = 10000
    budget: int = 2_000_000
    ks_threshold: float = 0.15
    tolerance: float = 0.05
    min_survivors: int = 500
    bootstrap_resamples: int = 1000
    require_trend: bool = True
    log_level: str = "INFO"
    log_file: Optional[str] = None

    def __post_init__(self) -> None:
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment: {self.name}")
        if self.p_rule not in ("explicit", "power"):
            raise ConfigError(f"p_rule must be 'explicit' or 'power', got {self.p_rule}")
        if self.p_rule == "power" and not 0.0 < self.p_gamma < 1.0:
            raise ConfigError(f"p_gamma must lie in (0, 1), got {self.p_gamma}")
        if self.p_rule == "explicit" and len(self.p_values) not in (1, len(self.n_grid)):
            raise ConfigError("explicit p list must have one entry or one per n")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError("n grid must be a nonempty list of positive integers")
        if self.replicates < 1 or self.replicas_per_environment < 1 or self.chunk_size < 1:
            raise ConfigError("replicates, replicas and chunk size must be positive")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.fmt not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.fmt}")

    def p_for(self, n: int) -> int:
        """Intermediate generation ``p`` paired with horizon ``n``."""
        if self.p_rule == "power":
            return max(1, int(math.floor(n ** self.p_gamma)))
        if len(self.p_values) == 1:
            return int(self.p_values[0])
        return int(self.p_values[self.n_grid.index(n)])

    def pairs(self) -> List[Dict[str, int]]:
        return [{"n": n, "p": self.p_for(n)} for n in self.n_grid]

    def condition_a_warnings(self) -> List[str]:
        """Pairs violating ``p / n <= 0.1``."""
        return [
            f"p/n = {pair['p']}/{pair['n']} exceeds {CONDITION_A_RATIO}"
            for pair in self.pairs()
            if pair["p"] > CONDITION_A_RATIO * pair["n"]
        ]

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with the non-None overrides applied (CLI flags)."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class Config:
    """Configuration manager for an experiment file."""

    def __init__(self, config_path: str = "config.ini"):
        """Initialize configuration from file.

        Args:
            config_path: Path to the configuration file
        """
        self.config_path = config_path
        self._config = configparser.ConfigParser()
        self._load_config()

    def _load_config(self) -> None:
        """Load configuration from file."""
        if not os.path.exists(self.config_path):
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")

        self._config.read(self.config_path)
        if not self._config.has_section("experiment"):
            raise ConfigError(f"{self.config_path} has no [experiment] section")

    def _json(self, section: str, key: str, fallback: Any) -> Any:
        raw = self._config.get(section, key, fallback=None)
        if raw is None:
            return fallback
        try:
            return json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"[{section}] {key} is not valid JSON: {e}")

    def _number(self, section: str, key: str, fallback: Any, kind: type = int) -> Any:
        try:
            if kind is int:
                return self._config.getint(section, key, fallback=fallback)
            if kind is bool:
                return self._config.getboolean(section, key, fallback=fallback)
            return self._config.getfloat(section, key, fallback=fallback)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key}: {e}")

    @property
    def name(self) -> str:
        """Experiment name."""
        return self._config.get("experiment", "NAME")

    @property
    def seed(self) -> int:
        """Master seed."""
        return self._number("experiment", "SEED", 0)

    @property
    def workers(self) -> int:
        return self._number("experiment", "WORKERS", 1)

    @property
    def replicates(self) -> int:
        """Environments (or walks) per grid point."""
        return self._number("experiment", "REPLICATES", 10000)

    @property
    def replicas_per_environment(self) -> int:
        return self._number("experiment", "REPLICAS_PER_ENVIRONMENT", 1)

    @property
    def chunk_size(self) -> int:
        return self._number("experiment", "CHUNK_SIZE", 1000)

    @property
    def out_dir(self) -> str:
        return self._config.get("experiment", "OUT_DIR", fallback="results")

    @property
    def fmt(self) -> str:
        return self._config.get("experiment", "FORMAT", fallback="csv")

    @property
    def z0(self) -> int:
        return self._number("experiment", "Z0", 1)

    @property
    def environment(self) -> Dict[str, Any]:
        """Environment descriptor: increment law plus offspring family."""
        if not self._config.has_section("environment"):
            return ExperimentConfig().environment
        descriptor: Dict[str, Any] = {}
        for key, value in self._config.items("environment"):
            try:
                descriptor[key] = json.loads(value)
            except json.JSONDecodeError:
                descriptor[key] = value
        return descriptor

    @property
    def n_grid(self) -> List[int]:
        return [int(n) for n in self._json("grid", "N", [1024])]

    @property
    def p_rule(self) -> str:
        return self._config.get("grid", "P_RULE", fallback="power")

    @property
    def p_values(self) -> List[int]:
        return [int(p) for p in self._json("grid", "P", [])]

    @property
    def p_gamma(self) -> float:
        return self._number("grid", "P_GAMMA", 0.5, float)

    @property
    def x_grid(self) -> List[float]:
        return [float(x) for x in self._json("grid", "X", ExperimentConfig().x_grid)]

    @property
    def q_grid(self) -> List[int]:
        return [int(q) for q in self._json("grid", "Q", [8, 16, 32])]

    @property
    def r_values(self) -> List[float]:
        return [float(r) for r in self._json("grid", "R", [0.0])]

    @property
    def t_values(self) -> List[float]:
        return [float(t) for t in self._json("grid", "T", [0.5])]

    @property
    def harmonic_grid(self) -> List[float]:
        return [float(x) for x in self._json("grid", "HARMONIC", ExperimentConfig().harmonic_grid)]

    @property
    def truncation(self) -> int:
        """Series truncation depth ``K`` for renewal-function estimates."""
        return self._number("grid", "TRUNCATION", 2000)

    @property
    def n_mc(self) -> int:
        return self._number("grid", "N_MC", 10000)

    @property
    def budget(self) -> int:
        """Proposal budget of rejection samplers and cap on topped-up replicates."""
        return self._number("grid", "BUDGET", 2_000_000)

    @property
    def ks_threshold(self) -> float:
        return self._number("thresholds", "KS", 0.15, float)

    @property
    def tolerance(self) -> float:
        return self._number("thresholds", "TOLERANCE", 0.05, float)

    @property
    def min_survivors(self) -> int:
        return self._number("thresholds", "MIN_SURVIVORS", 500)

    @property
    def bootstrap_resamples(self) -> int:
        return self._number("thresholds", "BOOTSTRAP_RESAMPLES", 1000)

    @property
    def require_trend(self) -> bool:
        return self._number("thresholds", "REQUIRE_TREND", True, bool)

    @property
    def log_level(self) -> str:
        return self._config.get("logging", "LEVEL", fallback="INFO")

    @property
    def log_file(self) -> Optional[str]:
        return self._config.get("logging", "FILE", fallback=None)

    def experiment_config(self) -> ExperimentConfig:
        """Typed, validated view of the file."""
        try:
            return ExperimentConfig(
                name=self.name,
                environment=self.environment,
                n_grid=self.n_grid,
                p_rule=self.p_rule,
                p_values=self.p_values,
                p_gamma=self.p_gamma,
                replicates=self.replicates,
                replicas_per_environment=self.replicas_per_environment,
                chunk_size=self.chunk_size,
                seed=self.seed,
                workers=self.workers,
                out_dir=self.out_dir,
                fmt=self.fmt,
                z0=self.z0,
                x_grid=self.x_grid,
                q_grid=self.q_grid,
                r_values=self.r_values,
                t_values=self.t_values,
                harmonic_grid=self.harmonic_grid,
                truncation=self.truncation,
                n_mc=self.n_mc,
                budget=self.budget,
                ks_threshold=self.ks_threshold,
                tolerance=self.tolerance,
                min_survivors=self.min_survivors,
                bootstrap_resamples=self.bootstrap_resamples,
                require_trend=self.require_trend,
                log_level=self.log_level,
                log_file=self.log_file,
            )
        except configparser.NoOptionError as e:
            raise ConfigError(str(e))


def load_experiment_config(path: str) -> ExperimentConfig:
    return Config(path).experiment_config()


def resolve_out_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / cfg.name
