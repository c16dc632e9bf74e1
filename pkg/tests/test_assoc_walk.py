"""Tests for the associated random walk."""

import math

import numpy as np
import pytest
from scipy import stats

from src.models.assoc_walk import (
    IncrementLaw,
    StableParams,
    WalkPath,
    fit_cn_exponent,
    lattice_meander_pmf,
    lattice_min_tail,
    lattice_pmf,
    norming_cn,
    rho,
    sample_stable,
    simulate_walks,
    stable_variates,
    truncated_second_moment,
)
from src.utils.errors import DomainError


class TestStableParameters:
    def test_rho_brownian(self):
        assert rho(2.0, 0.0) == 0.5

    def test_rho_skewed(self):
        assert rho(1.5, 0.5) == pytest.approx(0.4016, abs=1e-4)

    def test_inadmissible_pairs(self):
        for alpha, beta in ((2.0, 0.5), (1.0, 0.3), (1.5, 1.0), (2.5, 0.0)):
            with pytest.raises(DomainError):
                StableParams(alpha, beta)

    def test_harmonic_exponent(self):
        assert StableParams(2.0).harmonic_exponent == 1.0
        params = StableParams(1.5, 0.5)
        assert params.harmonic_exponent == pytest.approx(1.5 * (1 - params.rho))

    def test_pareto_attracts_to_skewed_stable(self):
        law = IncrementLaw.pareto(1.5, 0.75)
        assert law.stable.beta == pytest.approx(0.5)


class TestNorming:
    def test_gaussian_truncated_moment(self):
        value = truncated_second_moment(IncrementLaw.gaussian(1.0), 1.0)
        assert value == pytest.approx(0.19875, abs=1e-5)

    def test_lattice_cn_is_sqrt_n(self):
        assert norming_cn(IncrementLaw.lattice(), 100) == pytest.approx(10.0, rel=1e-8)

    def test_gaussian_cn(self):
        assert norming_cn(IncrementLaw.gaussian(1.0), 10 ** 4) == pytest.approx(100.0, rel=0.01)

    def test_cn_exponent_is_one_over_alpha(self):
        law = IncrementLaw.exact_stable(1.5, 0.0)
        assert fit_cn_exponent(law, [256, 1024, 4096]) == pytest.approx(1 / 1.5, abs=0.02)

    def test_cn_rejects_nonpositive_n(self):
        with pytest.raises(DomainError):
            norming_cn(IncrementLaw.lattice(), 0)


class TestSampling:
    def test_stable_alpha_two_variance(self, rng):
        draws = stable_variates(StableParams(2.0, 0.0, 0.8), 200000, rng)
        assert draws.var() == pytest.approx(1.6, rel=0.01)

    def test_stable_positivity(self, rng):
        draws = stable_variates(StableParams(1.5, 0.5, 1.0), 10 ** 6, rng)
        assert np.mean(draws > 0) == pytest.approx(rho(1.5, 0.5), abs=0.005)

    def test_single_stable_draw(self, rng):
        assert isinstance(sample_stable(StableParams(1.2, 0.0), rng), float)

    def test_lattice_increments(self, rng):
        walks = simulate_walks(IncrementLaw.lattice(), 50, 100, rng)
        assert walks.shape == (100, 51)
        assert np.all(np.abs(np.diff(walks, axis=1)) == 1.0)
        assert np.all(walks[:, 0] == 0.0)

    def test_pareto_is_centered(self, rng):
        law = IncrementLaw.pareto(1.8, 0.3)
        draws = law.sample(10 ** 6, rng)
        assert abs(np.median(draws)) < 2.0
        assert abs(draws.mean()) < 0.1

    @pytest.mark.slow
    def test_gaussian_scaled_sum_is_normal(self, rng):
        law = IncrementLaw.gaussian(1.0)
        n = 4096
        ends = np.concatenate([simulate_walks(law, n, 5000, rng)[:, -1] for _ in range(20)])
        ks = stats.kstest(ends / norming_cn(law, n), "norm").statistic
        assert ks <= 0.02


class TestWalkPath:
    def test_minimum_includes_origin_maximum_excludes_it(self):
        path = WalkPath.from_increments([-1.0, -1.0, 3.0])
        assert path.minimum == -2.0
        assert path.maximum == 1.0
        assert WalkPath.from_increments([-1.0, -2.0]).maximum == -1.0

    def test_argmin_is_first_attainment(self, rng):
        paths = np.cumsum(rng.integers(-2, 3, size=(1000, 20)), axis=1)
        for row in paths:
            path = WalkPath(np.concatenate(([0.0], row)))
            brute = min(range(21), key=lambda j: (path.values[j], j))
            assert path.argmin == brute

    def test_post_minimum(self):
        path = WalkPath(np.array([0.0, 2.0, 1.0, 3.0, 0.5]))
        assert path.min_from(1) == 0.5
        assert path.post_min(1) == -1.5


class TestLatticeFormulas:
    def test_min_tail_matches_enumeration(self):
        m = 10
        steps = np.array(np.meshgrid(*[[-1, 1]] * m)).reshape(m, -1).T
        paths = np.concatenate([np.zeros((steps.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
        minima = paths.min(axis=1)
        for a in range(0, 6):
            assert lattice_min_tail(m, a) == pytest.approx(np.mean(minima >= -a), abs=1e-12)

    def test_min_tail_zero_steps(self):
        assert lattice_min_tail(0, 0) == 1.0

    def test_min_tail_rate(self):
        assert lattice_min_tail(4096, 0) == pytest.approx(math.sqrt(2 / (math.pi * 4096)), rel=0.01)

    def test_pmf_sums_to_one(self):
        y = np.arange(-200, 201)
        assert lattice_pmf(200, y).sum() == pytest.approx(1.0, abs=1e-12)

    def test_meander_pmf_total(self):
        for r in (0, 3):
            _, probs = lattice_meander_pmf(64, r)
            assert probs.sum() == pytest.approx(float(lattice_min_tail(64, r)), abs=1e-12)
