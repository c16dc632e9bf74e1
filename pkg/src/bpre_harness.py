"""Command line harness for the simulation toolkit."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .config import ExperimentConfig, load_experiment_config
from .models.assoc_walk import norming_cn
from .models.bpre_core import extinction_schedule, simulate_environment, simulate_population
from .models.conditioned_walk import (
    SIDE_U,
    SIDE_V,
    HarmonicEstimate,
    estimate_U,
    estimate_V,
    lattice_meander_endpoints,
    sample_conditioned_min,
    sample_pplus_batch,
)
from .models.limit_law import (
    ROUTE_BROWNIAN,
    ROUTE_MEANDER,
    ROUTE_PPLUS,
    BROWNIAN_C0,
    LimitLawSpec,
)
from .services.experiment_common import environment_model, increment_law
from .services.experiment_runner import run_experiment
from .services.report_writer import ReportWriter, collect_summaries, format_report, report_rows
from .utils.errors import BpreError
from .utils.logger import setup_logger
from .utils.rng import make_stream

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_STATISTICAL_FAILURE = 2


class BpreHarness:
    """Main application class for simulation runs and experiments."""

    def __init__(self, cfg: Optional[ExperimentConfig] = None):
        """Initialize the application.

        Args:
            cfg: Experiment configuration; defaults apply when omitted
        """
        self.cfg = cfg or ExperimentConfig()
        log_file = Path(self.cfg.log_file) if self.cfg.log_file else None
        self.logger = setup_logger(level=self.cfg.log_level, log_file=log_file)

    @property
    def out_dir(self) -> Path:
        return Path(self.cfg.out_dir)

    def simulate(self, n: int, p: Optional[int], z0: int) -> Dict[str, Path]:
        """Simulate one environment and one population in it.

        Writes the environment as seed plus descriptor, never as a raw path,
        together with the trajectory table.
        """
        p = n if p is None else p
        model = environment_model(self.cfg)
        rng = make_stream(self.cfg.seed, "simulate")
        env = simulate_environment(model, n, rng)
        schedule = extinction_schedule(env)
        trajectory = simulate_population(env, z0, p, rng)

        writer = ReportWriter(self.out_dir / "simulate", self.cfg.fmt)
        rows = [
            {
                "k": k,
                "S_k": float(env.S[k]),
                "Z_k": int(trajectory.counts[k]) if k <= p else None,
                "q_k": float(schedule.q[k]),
            }
            for k in range(n + 1)
        ]
        table = writer.write_table("trajectory", rows)
        environment = writer.write_json(
            "environment.json",
            {
                "seed": self.cfg.seed,
                "stream": "simulate",
                "environment": model.describe(),
                "n": n,
                "p": p,
                "z0": z0,
                "extinct_at": trajectory.extinct_at,
                "normal_approximated": trajectory.approximated,
            }
        )
        self.logger.info(f"Simulated n={n}: Z_{p} = {trajectory.final}")
        return {"trajectory": table, "environment": environment}

    def estimate_v(self, side: str, grid: List[float]) -> HarmonicEstimate:
        law = increment_law(self.cfg)
        rng = make_stream(self.cfg.seed, "estimate", side)
        if side == SIDE_V:
            estimate = estimate_V(law, grid, self.cfg.truncation, self.cfg.n_mc, rng)
        else:
            estimate = estimate_U(law, grid, self.cfg.truncation, self.cfg.n_mc, rng)
        path = estimate.to_csv(self.out_dir / "estimate" / f"{side}.csv")
        self.logger.info(f"{side} estimate written to {path}")
        return estimate

    def limit_law(self, route: str, n: int) -> List[Dict[str, Any]]:
        """Tabulate ``D`` on the configured x grid by one route."""
        law = increment_law(self.cfg)
        params = law.stable
        rng = make_stream(self.cfg.seed, "limit-law", route)
        c_n = norming_cn(law, n)
        V = None
        if route != ROUTE_BROWNIAN and not law.is_lattice:
            grid = np.linspace(0.0, 4.0 * c_n, 33)
            V = estimate_V(law, grid, self.cfg.truncation, self.cfg.n_mc, rng)

        if route == ROUTE_BROWNIAN:
            spec = LimitLawSpec.brownian()
        elif route == ROUTE_MEANDER:
            if law.is_lattice:
                endpoints = lattice_meander_endpoints(n, 0.0, self.cfg.n_mc, rng)
            else:
                endpoints = sample_conditioned_min(
                    n, 0.0, law, rng, self.cfg.budget, target=self.cfg.n_mc, keep_paths=False
                ).endpoints
            scaled = endpoints / c_n
            C0 = BROWNIAN_C0 if params.alpha == 2.0 else 1.0 / float(
                np.mean(np.maximum(scaled, 0.0) ** params.harmonic_exponent)
            )
            spec = LimitLawSpec.from_meander(params, C0, scaled)
        elif route == ROUTE_PPLUS:
            batch = sample_pplus_batch(0.0, n, law, V, self.cfg.n_mc, rng)
            spec = LimitLawSpec.from_pplus(params, batch.endpoints / c_n, batch.weights)
        else:
            raise BpreError(f"unknown route: {route}")

        rows = spec.table(self.cfg.x_grid)
        ReportWriter(self.out_dir / "limit-law", self.cfg.fmt).write_table(f"D_{route}", rows)
        return rows

    def run_experiment(self) -> int:
        """Run the configured experiment; exit code 2 when a check fails."""
        result = run_experiment(self.cfg)
        for ks in result.ks:
            self.logger.info(f"{ks.label}: KS {ks.statistic:.4f} (threshold {ks.threshold})")
        return EXIT_OK if result.passed else EXIT_STATISTICAL_FAILURE

    def report(self) -> int:
        """Print and save one row per summary found under the output directory."""
        rows = report_rows(collect_summaries(self.out_dir))
        print(format_report(rows))
        if rows:
            ReportWriter(self.out_dir, self.cfg.fmt).write_table("report", rows)
        return EXIT_OK if all(row["passed"] for row in rows) else EXIT_STATISTICAL_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpre-harness",
        description="Simulate branching processes in random environment and test their limit laws.",
    )
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--workers", type=int, help="worker processes")
    parser.add_argument("--out-dir", help="output directory")
    parser.add_argument("--format", choices=["csv", "json"], dest="fmt", help="table format")
    parser.add_argument("--log-level", help="logging level")
    parser.add_argument("--log-file", help="log file")
    parser.add_argument("--config", help="experiment config for the non-experiment commands")

    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="simulate one environment and population")
    simulate.add_argument("--n", type=int, default=100)
    simulate.add_argument("--p", type=int)
    simulate.add_argument("--z0", type=int, default=1)

    estimate = commands.add_parser("estimate-v", help="tabulate V or U by Monte Carlo")
    estimate.add_argument("--side", choices=[SIDE_V, SIDE_U], default=SIDE_V)
    estimate.add_argument("--grid", help="JSON list of grid points")

    limit = commands.add_parser("limit-law", help="tabulate D(x)")
    limit.add_argument(
        "--route", choices=[ROUTE_BROWNIAN, ROUTE_MEANDER, ROUTE_PPLUS], default=ROUTE_BROWNIAN
    )
    limit.add_argument("--n", type=int, default=4096)

    experiment = commands.add_parser("experiment", help="configured experiments")
    actions = experiment.add_subparsers(dest="action", required=True)
    run = actions.add_parser("run", help="run one experiment config")
    run.add_argument("experiment_config")

    commands.add_parser("report", help="pass/fail table of finished runs")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    path = getattr(args, "experiment_config", None) or args.config
    cfg = load_experiment_config(path) if path else ExperimentConfig()
    return cfg.with_overrides(
        seed=args.seed,
        workers=args.workers,
        out_dir=args.out_dir,
        fmt=args.fmt,
        log_level=args.log_level,
        log_file=args.log_file,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        app = BpreHarness(_load(args))
        if args.command == "simulate":
            app.simulate(args.n, args.p, args.z0)
            return EXIT_OK
        if args.command == "estimate-v":
            grid = json.loads(args.grid) if args.grid else app.cfg.harmonic_grid
            if args.side == SIDE_U:
                grid = [-abs(float(x)) for x in grid]
            app.estimate_v(args.side, grid)
            return EXIT_OK
        if args.command == "limit-law":
            for row in app.limit_law(args.route, args.n):
                print(f"{row['x']:>6.2f} {row['estimate']:.5f} ({row['se']:.5f})")
            return EXIT_OK
        if args.command == "experiment":
            return app.run_experiment()
        return app.report()
    except Exception as e:
        setup_logger().error(f"Error: {e}")
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
