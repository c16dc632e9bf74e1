"""Tests for offspring laws and environment models."""

import math

import numpy as np
import pytest

from src.models.assoc_walk import IncrementLaw
from src.models.offspring_env import (
    EnvironmentModel,
    LawArray,
    OffspringLaw,
    block_maxima_growth,
    check_condition_A2,
    gf_eval,
    sample_offspring,
    zeta,
)
from src.utils.errors import DomainError, UnsupportedLawError
from src.utils.rng import make_stream


class TestGeneratingFunctions:
    def test_poisson_at_zero(self):
        assert gf_eval(OffspringLaw.poisson(1.0), 0.0) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_gf_at_one_is_one(self):
        laws = [
            OffspringLaw.geometric(0.3),
            OffspringLaw.poisson(2.5),
            OffspringLaw.linear_fractional(1.7, 1.4),
            OffspringLaw.explicit([0.2, 0.3, 0.5]),
        ]
        for law in laws:
            assert gf_eval(law, 1.0) == pytest.approx(1.0, abs=1e-14)

    def test_gf_matches_series(self):
        law = OffspringLaw.linear_fractional(2.0, 1.5)
        s = np.linspace(0.0, 0.95, 7)
        k = np.arange(400)
        series = (law.pmf(k)[None, :] * s[:, None] ** k).sum(axis=1)
        np.testing.assert_allclose(law.gf(s), series, rtol=1e-10)

    def test_rejects_argument_outside_unit_interval(self):
        with pytest.raises(DomainError):
            gf_eval(OffspringLaw.geometric(0.5), 1.5)


class TestMoments:
    def test_linear_fractional_eta_is_exact(self):
        law = OffspringLaw.linear_fractional(1.3, 1.8)
        assert law.eta == 1.8
        assert law.mean == pytest.approx(1.3, rel=1e-12)

    def test_geometric_eta_is_two(self):
        assert OffspringLaw.geometric(0.25).eta == pytest.approx(2.0, rel=1e-12)

    def test_linear_fractional_existence_bound(self):
        with pytest.raises(DomainError):
            OffspringLaw.linear_fractional(4.0, 1.0)

    def test_point_mass_at_zero_has_zero_eta(self):
        law = OffspringLaw.point_mass(0)
        assert law.mean == 0.0
        assert law.eta == 0.0

    def test_log_mean_round_trip(self):
        model = EnvironmentModel(IncrementLaw.gaussian(1.0))
        for x in (-2.3, -0.1, 0.0, 0.7, 3.1):
            law = model.law_array(np.array([x]))
            assert math.log(float(law.mean()[0])) == pytest.approx(x, abs=1e-12)


class TestSampling:
    def test_geometric_mean(self, rng):
        draws = sample_offspring(OffspringLaw.geometric(0.5), rng, 10 ** 6)
        assert draws.mean() == pytest.approx(1.0, abs=0.01)

    def test_poisson_mean(self, rng):
        draws = OffspringLaw.poisson(math.e).sample(rng, 10 ** 6)
        assert draws.mean() == pytest.approx(math.e, abs=0.01)

    def test_scalar_draw_is_int(self, rng):
        assert isinstance(OffspringLaw.geometric(0.5).sample(rng), int)

    def test_offspring_sum_matches_mean(self, rng):
        laws = LawArray.from_laws([OffspringLaw.linear_fractional(1.5, 1.2)] * 20000)
        z = np.full(20000, 10)
        total, approx = laws.offspring_sum(z, rng)
        assert not approx.any()
        se = math.sqrt(10 * OffspringLaw.linear_fractional(1.5, 1.2).variance / 20000)
        assert abs(total.mean() - 15.0) <= 4 * se

    def test_offspring_sum_normal_regime_is_flagged(self, rng):
        laws = LawArray.from_laws([OffspringLaw.poisson(1.0)] * 3)
        total, approx = laws.offspring_sum(np.array([0, 5, 10 ** 10]), rng, normal_threshold=1e9)
        assert total[0] == 0
        assert approx.tolist() == [False, False, True]
        assert total[2] == pytest.approx(1e10, rel=1e-3)

    def test_mixed_kinds_rejected(self):
        with pytest.raises(DomainError):
            LawArray.from_laws([OffspringLaw.geometric(0.5), OffspringLaw.poisson(1.0)])


class TestZeta:
    def test_zero_level_is_second_moment_ratio(self):
        law = OffspringLaw.poisson(2.0)
        assert zeta(law, 0) == pytest.approx((4.0 + 2.0) / 4.0, rel=1e-12)

    def test_tail_is_decreasing(self):
        law = OffspringLaw.geometric(0.4)
        values = [zeta(law, a) for a in (0, 1, 5, 20)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_explicit_tail(self):
        law = OffspringLaw.explicit([0.25, 0.25, 0.5])
        assert zeta(law, 2) == pytest.approx(4 * 0.5 / 1.25 ** 2, rel=1e-12)

    def test_law_array_matches_scalar(self):
        families = [
            [OffspringLaw.geometric(0.4), OffspringLaw.geometric(0.7)],
            [OffspringLaw.poisson(2.5), OffspringLaw.poisson(0.3)],
            [OffspringLaw.linear_fractional(1.7, 1.4), OffspringLaw.linear_fractional(0.8, 2.0)],
            [OffspringLaw.explicit([0.2, 0.3, 0.5]), OffspringLaw.explicit([0.1, 0.0, 0.0, 0.9])],
        ]
        for laws in families:
            array = LawArray.from_laws(laws)
            for a in (0, 1, 3, 7):
                expected = [zeta(law, a) for law in laws]
                np.testing.assert_allclose(array.zeta(a), expected, rtol=1e-9, atol=1e-12)

    def test_law_array_zero_mean_is_infinite(self):
        array = LawArray.from_laws([OffspringLaw.point_mass(0), OffspringLaw.point_mass(2)])
        values = array.zeta(0)
        assert math.isinf(values[0])
        assert values[1] == pytest.approx(1.0)

    def test_heavy_tail_unsupported(self):
        law = OffspringLaw.explicit([0.5, 0.5], heavy_tail=True)
        with pytest.raises(UnsupportedLawError):
            zeta(law, 1)


class TestEnvironmentModel:
    def test_descriptor_round_trip(self):
        descriptor = {
            "increment": "gaussian",
            "sigma": 0.5,
            "offspring": "linear-fractional",
            "eta": 1.5,
        }
        model = EnvironmentModel.from_descriptor(descriptor)
        assert EnvironmentModel.from_descriptor(model.describe()) == model

    def test_fixed_family_needs_pmf(self):
        model = EnvironmentModel.from_descriptor({"offspring": "fixed", "pmf": [0.5, 0.0, 0.5]})
        assert model.is_deterministic
        assert model.law_kind == "explicit"

    def test_unknown_family(self):
        with pytest.raises(DomainError):
            EnvironmentModel(IncrementLaw.lattice(), "binomial")

    def test_condition_a2_finite_for_poisson(self, rng):
        model = EnvironmentModel(IncrementLaw.gaussian(1.0), "poisson")
        report = check_condition_A2(model, 0, 0.1, 5000, rng)
        assert report.verdict == "finite"
        assert report.ci_low <= report.estimate <= report.ci_high

    def test_condition_a2_suspect_for_stable_environment(self, rng):
        model = EnvironmentModel(IncrementLaw.exact_stable(1.2, 0.0), "geometric")
        report = check_condition_A2(model, 0, 0.1, 20000, rng)
        assert report.verdict == "suspect"
        assert report.growth_exponent > 2.0

    def test_condition_a2_truncated_level(self):
        model = EnvironmentModel(IncrementLaw.gaussian(1.0), "geometric")
        full = check_condition_A2(model, 0, 0.1, 5000, make_stream(3, "a2"))
        truncated = check_condition_A2(model, 3, 0.1, 5000, make_stream(3, "a2"))
        assert truncated.verdict == "finite"
        assert truncated.estimate <= full.estimate

    def test_block_maxima_growth_separates_tails(self, rng):
        light = np.abs(rng.standard_normal(20000))
        heavy = rng.pareto(1.0, 20000)
        assert block_maxima_growth(light) < 1.5
        assert block_maxima_growth(heavy) > 3.0

    def test_condition_a2_needs_samples(self, rng):
        model = EnvironmentModel(IncrementLaw.gaussian(1.0))
        with pytest.raises(DomainError):
            check_condition_A2(model, 0, 0.1, 10, rng)
