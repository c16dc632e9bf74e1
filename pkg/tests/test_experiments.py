"""Small end-to-end runs of every experiment."""

import json
from pathlib import Path

import numpy as np
import pytest

from src.config import load_experiment_config
from src.services.experiment_runner import RUNNERS, run_experiment
from src.services.parallel import chunk_plan, map_chunks
from src.services.reduced_experiments import W_U_GRID, simulate_reduced, w_constancy_statistic
from src.utils.errors import InsufficientSampleError

GAUSSIAN = {"increment": "gaussian", "sigma": 1.0, "offspring": "geometric"}
LATTICE = {"increment": "lattice-ssrw", "offspring": "geometric"}

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _square(x: int) -> int:
    return x * x


class TestParallel:
    def test_chunk_plan_covers_total(self):
        plan = chunk_plan(1050, 100)
        assert len(plan) == 11
        assert plan[-1] == (10, 1000, 50)
        assert sum(size for _, _, size in plan) == 1050

    def test_map_chunks_keeps_order(self):
        assert map_chunks(_square, list(range(12)), workers=3) == [x * x for x in range(12)]

    def test_reduced_sample_independent_of_workers(self, small_config):
        cfg = small_config("reduced-law", environment=GAUSSIAN, n_grid=[64])
        serial = simulate_reduced(cfg, 64, 8, 0)
        parallel = simulate_reduced(cfg.with_overrides(workers=2), 64, 8, 0)
        np.testing.assert_array_equal(serial.Zp, parallel.Zp)
        np.testing.assert_array_equal(serial.Zpn, parallel.Zpn)
        np.testing.assert_array_equal(serial.environment, parallel.environment)


class TestRunners:
    def test_every_experiment_has_a_runner(self):
        from src.config import EXPERIMENTS

        assert set(RUNNERS) == set(EXPERIMENTS)

    def test_reduced_law(self, small_config):
        cfg = small_config("reduced-law", environment=GAUSSIAN, n_grid=[64, 256])
        result = run_experiment(cfg)
        assert len(result.ks) == 2
        assert result.checks["survival_at_zero_n64"]
        assert result.checks["survival_at_zero_n256"]
        assert "ks_at_largest_n" in result.checks
        assert result.metrics["condition_A2"]["verdict"] == "finite"

        out = cfg.out_dir + "/reduced-law"
        with open(f"{out}/summary.json") as f:
            summary = json.load(f)
        assert summary["experiment"] == "reduced-law"
        assert summary["config"]["seed"] == 7
        assert summary["passed"] == result.passed
        assert summary["metrics"]["condition_A2"]["n_samples"] == 5000
        header = open(f"{out}/observations.csv").readline().strip()
        assert header == "replicate,n,p,Z_p,q_pn,Z_pn,survived,scaled_value"

    def test_too_few_survivors(self, small_config):
        cfg = small_config("reduced-law", environment=GAUSSIAN, n_grid=[64], min_survivors=10 ** 6)
        with pytest.raises(InsufficientSampleError) as info:
            run_experiment(cfg, write=False)
        assert info.value.required == 10 ** 6

    def test_t_small(self, small_config):
        cfg = small_config("t-small", environment=GAUSSIAN, n_grid=[256])
        result = run_experiment(cfg, write=False)
        assert "dominates_unconditioned_n256" in result.checks
        assert result.metrics["per_n"][0]["p"] == 16

    def test_minima_law_lattice(self, small_config):
        cfg = small_config(
            "minima-law",
            environment=LATTICE,
            n_grid=[256],
            p_rule="explicit",
            p_values=[16],
            r_values=[0.0, 2.0],
            x_grid=[0.0, 0.5, 1.0],
            replicates=4000,
        )
        result = run_experiment(cfg, write=False)
        assert result.checks["mc_matches_exact_r0"]
        assert result.checks["mc_matches_exact_r2"]
        profile = result.tables["minima_profile"]
        assert len(profile) == 6
        assert profile[0]["exact"] == pytest.approx(1.0)
        assert len(result.tables["minimum_below_ratio"]) == 2

    def test_harmonicity_lattice(self, small_config):
        cfg = small_config("harmonicity", environment=LATTICE, harmonic_grid=[0.0, 1.0, 2.0])
        result = run_experiment(cfg, write=False)
        assert len(result.tables["harmonicity"]) == 6
        assert {"V_relative_error", "U_relative_error"} <= set(result.metrics)

    def test_limit_law_routes_lattice(self, small_config):
        cfg = small_config(
            "limit-law-routes", environment=LATTICE, n_grid=[64, 128, 256], x_grid=[0.0, 1.0]
        )
        result = run_experiment(cfg, write=False)
        assert result.checks["closed_form_pinned_by_quadrature"]
        routes = {row["route"] for row in result.tables["limit_law"]}
        assert routes == {"closed-form-brownian", "meander-mc", "pplus-mc", "pplus-infimum-mc"}
        assert result.metrics["C0"]["plateau_window"] == [64, 128, 256]
        assert result.checks["pplus_matches_reweighted_meander"]
        assert result.metrics["pplus_meander_gap"] >= 0.0

    def test_w_constancy(self, small_config):
        cfg = small_config(
            "w-constancy", environment=GAUSSIAN, q_grid=[2, 3], replicates=200, chunk_size=50
        )
        result = run_experiment(cfg, write=False)
        assert result.checks["w_positive_finite_q2"]
        assert result.checks["w_positive_finite_q3"]
        assert [row["p"] for row in result.tables["w_constancy"]] == [4, 9]

    def test_w_constancy_deterministic_environment(self, small_config):
        fixed = {"offspring": "fixed", "pmf": [0.0, 0.0, 1.0]}
        cfg = small_config(
            "w-constancy", environment=fixed, q_grid=[2, 3], replicates=50, chunk_size=50
        )
        result = run_experiment(cfg, write=False)
        for row in result.tables["w_constancy"]:
            assert row["survivors"] == 50
            assert row["statistic"] == pytest.approx(0.0, abs=1e-9)

    def test_w_constancy_tops_up_replicates(self, small_config):
        cfg = small_config(
            "w-constancy", environment=GAUSSIAN, q_grid=[2], replicates=50, chunk_size=25
        )
        sample = simulate_reduced(
            cfg, 256, 4, 0, horizon=6, q=2, w_grid=W_U_GRID, scale=1.0, target_survivors=60
        )
        assert sample.survivors >= 60
        assert len(sample.Zpn) > cfg.replicates
        assert len(sample.Zpn) % cfg.replicates == 0

    def test_w_constancy_top_up_rounds_are_fresh(self, small_config):
        cfg = small_config(
            "w-constancy", environment=GAUSSIAN, replicates=50, chunk_size=25, budget=100
        )
        sample = simulate_reduced(cfg, 64, 4, 0, horizon=6, q=2, target_survivors=10 ** 6)
        assert len(sample.Zpn) == 100
        np.testing.assert_array_equal(sample.environment, np.arange(100))
        assert not np.array_equal(sample.survival[:50], sample.survival[50:])

    def test_w_constancy_budget_caps_rounds(self, small_config):
        cfg = small_config(
            "w-constancy",
            environment=GAUSSIAN,
            q_grid=[2],
            replicates=50,
            chunk_size=25,
            budget=150,
            min_survivors=10 ** 6,
        )
        with pytest.raises(InsufficientSampleError) as info:
            run_experiment(cfg, write=False)
        assert info.value.achieved <= 150

    def test_w_statistic(self):
        W = np.array([[1.0, 1.5], [2.0, 2.0], [4.0, 2.0]])
        assert w_constancy_statistic(W) == pytest.approx(0.5)

    def test_survival_asymptotics(self, small_config):
        cfg = small_config("survival-asymptotics", environment=LATTICE, n_grid=[16, 32, 64])
        result = run_experiment(cfg, write=False)
        rows = result.tables["survival_asymptotics"]
        assert [row["n"] for row in rows] == [16, 32, 64]
        assert all(0 < row["p_survival"] < 1 for row in rows)
        assert result.metrics["expected_slope"] == pytest.approx(-0.5)
        low, high = result.metrics["theta_ci"]
        assert low <= result.metrics["theta_estimate"] <= high
        tightness = result.metrics["j_plus_tightness"]
        assert tightness["n"] == 16
        assert tightness["accepted"] == [2000, 2000]
        assert 0.0 <= tightness["ks_n_vs_2n"] <= 1.0

    def test_meander_marginal(self, small_config):
        cfg = small_config(
            "meander-marginal",
            environment=GAUSSIAN,
            n_grid=[64],
            t_values=[0.5],
            truncation=64,
            n_mc=500,
        )
        result = run_experiment(cfg, write=False)
        row = result.tables["meander_marginal"][0]
        assert row["p"] == 32
        assert 0.0 <= row["ks"] <= 1.0


@pytest.mark.slow
class TestAcceptance:
    def test_minima_law_matches_brownian_tail(self, small_config):
        cfg = small_config(
            "minima-law",
            environment=LATTICE,
            n_grid=[4096],
            p_rule="explicit",
            p_values=[64],
            r_values=[0.0, 5.0],
            x_grid=[0.0, 0.5, 1.0, 1.5],
            replicates=20000,
        )
        result = run_experiment(cfg, write=False)
        assert result.passed, result.checks

    def test_c0_routes_for_simple_walk(self, small_config):
        cfg = small_config(
            "limit-law-routes",
            environment=LATTICE,
            n_grid=[1024, 2048, 4096],
            x_grid=[0.0, 0.5, 1.0, 2.0],
            n_mc=20000,
        )
        result = run_experiment(cfg, write=False)
        assert result.checks["C0_route1_near_sqrt_2_over_pi"]
        assert result.checks["C0_route2_near_sqrt_2_over_pi"]
        assert result.checks["bessel3_oracle"]

    def test_w_constancy_first_q_collects_enough_survivors(self, tmp_path):
        cfg = load_experiment_config(str(CONFIGS / "w_constancy.ini"))
        cfg = cfg.with_overrides(out_dir=str(tmp_path), log_level="WARNING")
        q = cfg.q_grid[0]
        sample = simulate_reduced(
            cfg,
            64 * q * q,
            q * q,
            0,
            horizon=2 * q * q - q,
            q=q,
            w_grid=W_U_GRID,
            scale=1.0,
            target_survivors=cfg.min_survivors,
        )
        assert sample.survivors >= cfg.min_survivors
        assert len(sample.Zpn) <= cfg.budget

    @pytest.mark.parametrize(
        "filename",
        [
            "reduced_law.ini",
            "t_small.ini",
            "minima_law.ini",
            "survival_asymptotics.ini",
            "w_constancy.ini",
            "harmonicity.ini",
            "harmonicity_gaussian.ini",
            "limit_law_routes.ini",
            "limit_law_routes_stable.ini",
            "meander_marginal.ini",
        ],
    )
    def test_shipped_config_passes(self, filename, tmp_path):
        cfg = load_experiment_config(str(CONFIGS / filename))
        cfg = cfg.with_overrides(out_dir=str(tmp_path), log_level="WARNING")
        result = run_experiment(cfg, write=False)
        assert result.passed, result.checks
