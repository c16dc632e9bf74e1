"""Dispatch of experiments by name and persistence of their outputs."""

from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, Tuple

from ..config import ExperimentConfig, resolve_out_dir
from ..models.offspring_env import check_condition_A2
from ..utils.logger import get_logger, setup_logger
from ..utils.rng import make_stream
from .experiment_common import ExperimentResult, environment_model
from .reduced_experiments import (
    run_meander_marginal,
    run_reduced_experiment,
    run_survival_asymptotics,
    run_t_small,
    run_w_constancy,
)
from .report_writer import ReportWriter
from .walk_experiments import (
    run_harmonicity,
    run_limit_law_routes,
    run_minima_experiment,
)

logger = get_logger(__name__)

A2_SAMPLES = 5000
A2_EPS = 0.1

Runner = Callable[[ExperimentConfig], ExperimentResult]

RUNNERS: Dict[str, Runner] = {
    "reduced-law": run_reduced_experiment,
    "minima-law": run_minima_experiment,
    "survival-asymptotics": run_survival_asymptotics,
    "t-small": run_t_small,
    "w-constancy": run_w_constancy,
    "harmonicity": run_harmonicity,
    "limit-law-routes": run_limit_law_routes,
    "meander-marginal": run_meander_marginal,
}


class ExperimentRunner:
    """Runs one configured experiment and writes its tables and summary."""

    def __init__(self, cfg: ExperimentConfig):
        """Initialize the runner.

        Args:
            cfg: Validated experiment configuration
        """
        self.cfg = cfg
        self.out_dir = resolve_out_dir(cfg)
        self.writer = ReportWriter(self.out_dir, cfg.fmt)

    def run(self) -> ExperimentResult:
        setup_logger(level=self.cfg.log_level, log_file=self.out_dir / "run.log")
        for warning in self.cfg.condition_a_warnings():
            logger.warning(f"Condition A gate: {warning}")
        condition_a2 = self.condition_a2()
        logger.info(f"Running experiment {self.cfg.name} (seed {self.cfg.seed})")
        result = RUNNERS[self.cfg.name](self.cfg)
        result.metrics["condition_A2"] = condition_a2
        verdict = "passed" if result.passed else "failed"
        logger.info(f"Experiment {self.cfg.name} {verdict}")
        return result

    def condition_a2(self) -> Dict[str, Any]:
        """Moment diagnostic for ``log+ zeta(0)`` on its own stream; warns when suspect."""
        env = environment_model(self.cfg)
        rng = make_stream(self.cfg.seed, self.cfg.name, "condition-a2")
        report = check_condition_A2(
            env, 0, A2_EPS, A2_SAMPLES, rng, n_resamples=self.cfg.bootstrap_resamples
        )
        if report.verdict == "suspect":
            logger.warning(
                f"Condition A2 gate: maxima of log+ zeta grow with exponent"
                f" {report.growth_exponent:.2f} on the log log scale"
            )
        return asdict(report)

    def write(self, result: ExperimentResult) -> Tuple[Path, Dict[str, Path]]:
        tables = {name: self.writer.write_table(name, rows) for name, rows in result.tables.items()}
        summary = self.writer.write_summary(result.summary(self.cfg))
        logger.info(f"Results written to {self.out_dir}")
        return summary, tables


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    runner = ExperimentRunner(cfg)
    result = runner.run()
    if write:
        runner.write(result)
    return result
