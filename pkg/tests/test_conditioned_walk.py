"""Tests for renewal functions, conditioned walks and C0."""

import math

import numpy as np
import pytest
from scipy import stats

from src.models.assoc_walk import IncrementLaw, lattice_min_tail, norming_cn
from src.models.conditioned_walk import (
    SIDE_U,
    SIDE_V,
    HarmonicEstimate,
    estimate_C0,
    estimate_U,
    estimate_V,
    lattice_conditioned_paths,
    lattice_meander_endpoints,
    lattice_U,
    lattice_V,
    minimum_below_ratio,
    pplus_weights_from_meander,
    sample_conditioned_min,
    sample_Pminus,
    sample_pminus_batch,
    sample_pplus_batch,
    sample_Pplus,
    verify_harmonicity,
)
from src.models.limit_law import BROWNIAN_C0, maxwell_cdf
from src.utils.errors import (
    BudgetExhaustedError,
    CoverageError,
    DomainError,
    EstimateQualityError,
)


class TestLatticeRenewalFunctions:
    def test_values(self):
        np.testing.assert_array_equal(lattice_V([0, 1, 2.5, 7]), [1, 2, 3, 8])
        np.testing.assert_array_equal(lattice_U([0, -1, -2, -3]), [1, 2, 4, 6])

    def test_outside_domain(self):
        assert lattice_V(-1.0) == 0.0
        assert lattice_U(1.0) == 0.0

    def test_exact_harmonicity(self, rng):
        law = IncrementLaw.lattice()
        for side, grid in ((SIDE_V, [0, 1, 2, 5, 10]), (SIDE_U, [0, -1, -2, -5, -10])):
            exact = HarmonicEstimate.exact_lattice(grid, side)
            residuals = verify_harmonicity(exact, law, 1000, rng)
            np.testing.assert_array_equal(residuals.residuals, 0.0)
            assert residuals.passes()


class TestRenewalEstimates:
    def test_v_anchor_and_monotone(self, rng):
        est = estimate_V(IncrementLaw.gaussian(1.0), [0, 0.5, 1, 2, 4], 500, 2000, rng)
        assert est.values[0] == 1.0
        assert est.se[0] == 0.0
        assert np.all(np.diff(est.values) >= 0)

    def test_lattice_v_close_to_exact(self, rng):
        grid = [0, 1, 2, 3]
        est = estimate_V(IncrementLaw.lattice(), grid, 20000, 2000, rng)
        exact = lattice_V(grid)
        assert np.all(np.abs(est.values - exact) <= 4 * est.se + 0.02 * exact)

    def test_lattice_u_close_to_exact(self, rng):
        grid = [0, -1, -2, -3]
        est = estimate_U(IncrementLaw.lattice(), grid, 20000, 2000, rng)
        exact = lattice_U(grid)
        assert np.all(np.abs(est.values - exact) <= 4 * est.se + 0.02 * exact)

    def test_rejects_bad_arguments(self, rng):
        law = IncrementLaw.gaussian(1.0)
        with pytest.raises(DomainError):
            estimate_V(law, [0, -1], 100, 2000, rng)
        with pytest.raises(DomainError):
            estimate_U(law, [0, 1], 100, 2000, rng)
        with pytest.raises(DomainError):
            estimate_V(law, [0, 1], 100, 10, rng)
        with pytest.raises(DomainError):
            estimate_V(law, [0, 1], 0, 2000, rng)

    def test_interpolation_extrapolates_with_exponent(self, rng):
        est = estimate_V(IncrementLaw.gaussian(1.0), [0, 1, 2, 4], 200, 1000, rng)
        assert est.interpolate(8.0) == pytest.approx(2.0 * est.values[-1])
        assert est.interpolate(-0.5) == 0.0

    def test_csv_export(self, rng, tmp_path):
        est = HarmonicEstimate.exact_lattice([0, 1, 2])
        path = est.to_csv(tmp_path / "V.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "x,value,se,K,n_mc"
        assert len(lines) == 4

    @pytest.mark.slow
    def test_gaussian_growth_exponent(self, rng):
        grid = np.array([0, 5, 10, 20, 35, 50], dtype=float)
        est = estimate_V(IncrementLaw.gaussian(1.0), grid, 20000, 2000, rng)
        slope = np.polyfit(np.log(grid[1:]), np.log(est.values[1:]), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.1)

    def test_gaussian_harmonicity_within_three_se(self, rng):
        law = IncrementLaw.gaussian(1.0)
        est = estimate_V(law, [0, 0.5, 1, 2, 4, 8], 2000, 2000, rng)
        residuals = verify_harmonicity(est, law, 20000, rng)
        assert residuals.passes(3.0)

    def test_narrow_grid_is_a_coverage_error(self, rng):
        law = IncrementLaw.gaussian(1.0)
        est = estimate_V(law, [0, 0.5, 1], 100, 1000, rng)
        with pytest.raises(CoverageError):
            verify_harmonicity(est, law, 1000, rng)


class TestDoobTransforms:
    def test_pplus_leaves_zero_upward(self, rng):
        batch = sample_pplus_batch(0.0, 1, IncrementLaw.lattice(), None, 1000, rng)
        assert np.all(batch.paths[:, 1] == 1.0)

    def test_pminus_leaves_zero_downward(self, rng):
        batch = sample_pminus_batch(0.0, 1, IncrementLaw.lattice(), None, 1000, rng)
        assert np.all(batch.paths[:, 1] == -1.0)

    def test_pplus_stays_nonnegative(self, rng):
        batch = sample_pplus_batch(2.0, 200, IncrementLaw.lattice(), None, 500, rng)
        assert batch.paths.min() >= 0
        np.testing.assert_array_equal(batch.weights, 1.0)

    def test_pminus_two_step_kernel(self, rng):
        size = 40000
        batch = sample_pminus_batch(-1.0, 2, IncrementLaw.lattice(), None, size, rng)
        second = batch.paths[:, 2]
        # from -1: to -2 surely; from -2: to -1 w.p. U(-1)/(2U(-2)) = 1/4, to -3 w.p. 3/4
        assert np.all(batch.paths[:, 1] == -2.0)
        assert np.mean(second == -1.0) == pytest.approx(0.25, abs=0.01)
        assert np.mean(second == -3.0) == pytest.approx(0.75, abs=0.01)

    def test_single_pminus_step_law(self, rng):
        law = IncrementLaw.lattice()
        samples = [sample_Pminus(-2.0, 1, law, None, rng) for _ in range(4000)]
        draws = np.array([sample.path.values[1] for sample in samples])
        assert all(sample.weight == 1.0 for sample in samples)
        expected_up = lattice_U(-1.0) / (2.0 * lattice_U(-2.0))
        assert set(np.unique(draws)) <= {-1.0, -3.0}
        assert np.mean(draws == -1.0) == pytest.approx(float(expected_up), abs=0.025)

    def test_weighted_pminus_matches_exact_chain(self, rng):
        law = IncrementLaw.lattice()
        grid = -np.arange(0.0, 61.0)
        tabulated = HarmonicEstimate(
            side=SIDE_U,
            grid=grid,
            values=lattice_U(grid),
            se=np.zeros_like(grid),
            K=0,
            n_mc=0,
            exponent=1.0,
        )
        n, size = 10, 40000
        weighted = sample_pminus_batch(-2.0, n, law, tabulated, size, rng)
        exact = sample_pminus_batch(-2.0, n, law, None, size, rng)
        assert not np.all(weighted.weights == 1.0)
        assert weighted.weights.mean() == pytest.approx(1.0, abs=0.05)

        w, e = weighted.weights, weighted.endpoints
        mean_w = float(np.sum(w * e) / np.sum(w))
        se_w = math.sqrt(float(np.sum(w ** 2 * (e - mean_w) ** 2))) / float(np.sum(w))
        mean_x = float(exact.endpoints.mean())
        se_x = float(exact.endpoints.std(ddof=1)) / math.sqrt(size)
        assert np.all(exact.paths[:, 1:] < 0)
        assert abs(mean_w - mean_x) <= 4.0 * math.hypot(se_w, se_x)

    def test_start_domains(self, rng):
        law = IncrementLaw.lattice()
        with pytest.raises(DomainError):
            sample_pplus_batch(-1.0, 5, law, None, 10, rng)
        with pytest.raises(DomainError):
            sample_pminus_batch(1.0, 5, law, None, 10, rng)

    def test_nonlattice_needs_estimate(self, rng):
        with pytest.raises(EstimateQualityError):
            sample_Pplus(0.0, 5, IncrementLaw.gaussian(1.0), None, rng)

    def test_weighted_proposal_weights(self, rng):
        law = IncrementLaw.gaussian(1.0)
        V = estimate_V(law, np.linspace(0, 20, 21), 500, 1000, rng)
        batch = sample_pplus_batch(1.0, 20, law, V, 2000, rng)
        killed = np.any(batch.paths[:, 1:] < 0, axis=1)
        assert np.all(batch.weights[killed] == 0.0)
        assert np.all(batch.weights[~killed] > 0.0)

    @pytest.mark.slow
    def test_lattice_pplus_endpoint_is_bessel3(self, rng):
        p = 4096
        batch = sample_pplus_batch(0.0, p, IncrementLaw.lattice(), None, 20000, rng)
        # spread each parity cell over its width before comparing with a density
        scaled = (batch.endpoints + rng.uniform(-1.0, 1.0, batch.endpoints.size)) / math.sqrt(p)
        assert stats.kstest(scaled, maxwell_cdf).statistic <= 0.02


class TestConditionedMinimum:
    def test_single_step_rate(self, rng):
        sample = sample_conditioned_min(1, 0.0, IncrementLaw.lattice(), rng, 20000)
        assert sample.acceptance_rate == pytest.approx(0.5, abs=0.02)
        assert np.all(sample.endpoints == 1.0)

    @pytest.mark.slow
    def test_rate_matches_reflection(self, rng):
        n = 4096
        law = IncrementLaw.lattice()
        sample = sample_conditioned_min(n, 0.0, law, rng, 200000, keep_paths=False)
        assert sample.acceptance_rate == pytest.approx(math.sqrt(2 / (math.pi * n)), rel=0.1)
        assert sample.paths is None

    def test_accepted_paths_respect_level(self, rng):
        sample = sample_conditioned_min(30, 2.0, IncrementLaw.gaussian(1.0), rng, 5000)
        assert sample.paths is not None
        assert np.all(sample.paths.min(axis=1) >= -2.0)
        assert len(sample.walk_paths) == sample.accepted

    def test_budget_exhausted(self, rng):
        with pytest.raises(BudgetExhaustedError) as info:
            sample_conditioned_min(10 ** 5, 0.0, IncrementLaw.lattice(), rng, 1)
        assert info.value.rate_upper_bound == pytest.approx(3.0)

    def test_exact_lattice_paths(self, rng):
        paths = lattice_conditioned_paths(50, 2.0, 2000, rng)
        assert paths.min() >= -2.0
        assert np.all(np.abs(np.diff(paths, axis=1)) == 1.0)

    def test_exact_meander_endpoints(self, rng):
        ends = lattice_meander_endpoints(64, 0.0, 1000, rng)
        assert ends.min() >= 0
        assert np.all(ends % 2 == 0)

    def test_minimum_below_ratio(self):
        rows = minimum_below_ratio(4096, [0, 2, 5])
        assert rows[0].ratio == pytest.approx(1.0)
        for row in rows:
            assert row.bound_holds
            assert row.ratio == pytest.approx(1.0, abs=0.05)
            assert row.tail == pytest.approx(float(lattice_min_tail(4096, row.r)))

    def test_meander_weights(self):
        weights = pplus_weights_from_meander([-1.0, 0.0, 2.0, 3.0], 1.0)
        np.testing.assert_allclose(weights, [0, 0, 2, 3])


class TestC0:
    def test_lattice_routes(self, rng):
        constants = estimate_C0(IncrementLaw.lattice(), [1024, 2048, 4096], rng, n_endpoints=20000)
        assert constants.route1 == pytest.approx(BROWNIAN_C0, rel=0.05)
        assert constants.route2 == pytest.approx(BROWNIAN_C0, rel=0.05)
        assert 0.9 <= constants.ratio <= 1.1
        assert constants.window == [1024, 2048, 4096]
        summary = constants.to_dict()
        assert summary["plateau_window"] == [1024, 2048, 4096]
        assert not {"theta", "theta_ci"} & set(summary)

    def test_nonlattice_needs_v(self, rng):
        with pytest.raises(EstimateQualityError):
            estimate_C0(IncrementLaw.gaussian(1.0), [64], rng)

    def test_norming_used_for_route_two(self, rng):
        constants = estimate_C0(IncrementLaw.lattice(), [400], rng, n_endpoints=5000)
        expected = norming_cn(IncrementLaw.lattice(), 400)
        assert constants.sequence[0]["c_n"] == pytest.approx(expected)
