import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpfreq import privacy
from dpfreq.privacy import BudgetError, PrivacyBudget


class TestBudget:
    def test_validation(self):
        for eps, delta in [(0, 0), (-1, 0), (math.inf, 0), (1, 1), (1, -0.1)]:
            with pytest.raises(BudgetError):
                PrivacyBudget(eps, delta)
        assert PrivacyBudget(1).pure and not PrivacyBudget(1, 1e-6).pure

    def test_halve(self):
        assert PrivacyBudget(1, 0.2).halve() == PrivacyBudget(0.5, 0.1)


class TestSamplers:
    def test_laplace_moments(self):
        x = privacy.sample_laplace(1.0, privacy.make_rng(1), size=100_000)
        assert abs(x.var() / 2 - 1) < 0.05
        assert abs(np.median(x)) < 0.02

    def test_gaussian_moments(self):
        x = privacy.sample_gaussian(2.0, privacy.make_rng(2), size=100_000)
        assert abs(x.var() / 4 - 1) < 0.05
        y = privacy.sample_gaussian(1.0, privacy.make_rng(3), size=100_000)
        assert abs(np.mean(y <= 0) - 0.5) <= 0.01

    def test_determinism(self):
        a = privacy.sample_laplace(1.0, privacy.make_rng(42), size=10)
        b = privacy.sample_laplace(1.0, privacy.make_rng(42), size=10)
        assert a.tobytes() == b.tobytes()
        g1 = [privacy.sample_gaussian(1.0, privacy.make_rng(42)) for _ in range(3)]
        assert len(set(g1)) == 1
        assert isinstance(g1[0], float)

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            privacy.sample_laplace(0, privacy.make_rng(0))
        with pytest.raises(ValueError):
            privacy.sample_gaussian(-1, privacy.make_rng(0))

    def test_derive_seed(self):
        assert privacy.derive_seed(7, 1) == privacy.derive_seed(7, 1)
        assert len({privacy.derive_seed(7, i) for i in range(100)}) == 100


class TestKeyedNoise:
    def test_pure_function_of_key_and_id(self):
        ids = np.arange(1, 50)
        a = privacy.keyed_noise(privacy.LAPLACE, 2.0, 99, ids)
        b = privacy.keyed_noise(privacy.LAPLACE, 2.0, 99, ids[::-1])[::-1]
        assert np.array_equal(a, b)
        assert not np.array_equal(a, privacy.keyed_noise(privacy.LAPLACE, 2.0, 100, ids))

    def test_distribution(self):
        ids = np.arange(200_000)
        lap = privacy.keyed_noise(privacy.LAPLACE, 3.0, 5, ids)
        assert abs(lap.var() / (2 * 9) - 1) < 0.03
        gau = privacy.keyed_noise(privacy.GAUSSIAN, 3.0, 5, ids)
        assert abs(gau.var() / 9 - 1) < 0.03
        # neighbouring ids are uncorrelated
        assert abs(np.corrcoef(lap[:-1], lap[1:])[0, 1]) < 0.01

    def test_none(self):
        assert not privacy.keyed_noise(privacy.NONE, 1.0, 1, [1, 2]).any()
        with pytest.raises(ValueError):
            privacy.keyed_noise("cauchy", 1.0, 1, [1])


class TestAccountant:
    def test_basic_split(self):
        assert privacy.basic_split(PrivacyBudget(1, 0.1), 4) == PrivacyBudget(0.25, 0.025)
        assert privacy.basic_split(PrivacyBudget(2), 8) == PrivacyBudget(0.25, 0)
        b = PrivacyBudget(0.7, 0.01)
        assert privacy.basic_split(b, 1) == b

    def test_advanced_split(self):
        out = privacy.advanced_split(PrivacyBudget(1, 0.1), 16)
        assert out.epsilon == pytest.approx(1 / (2 * math.sqrt(32 * math.log(20))), rel=1e-15)
        assert out.epsilon == pytest.approx(0.0510, abs=1e-4)
        assert out.delta == pytest.approx(0.1 / 32, rel=1e-12)
        assert privacy.advanced_split(PrivacyBudget(0.5, 0.01), 100).delta == pytest.approx(5e-5)
        one = privacy.advanced_split(PrivacyBudget(0.5, 0.01), 1)
        assert one.epsilon == pytest.approx(0.5 / (2 * math.sqrt(2 * math.log(200))))
        assert one.epsilon < 0.5

    def test_advanced_split_errors(self):
        with pytest.raises(BudgetError):
            privacy.advanced_split(PrivacyBudget(0.5), 4)
        with pytest.raises(BudgetError):
            privacy.advanced_split(PrivacyBudget(1.5, 0.1), 4)
        with pytest.raises(ValueError):
            privacy.basic_split(PrivacyBudget(1), 0)

    def test_group_invert_examples(self):
        b = PrivacyBudget(1, 0.1)
        assert privacy.group_invert(b, 1) == b
        g = privacy.group_invert(b, 2)
        assert g.epsilon == 0.5
        assert g.delta == pytest.approx(0.1 * math.expm1(0.5) / math.expm1(1.0), rel=1e-15)

    @given(st.floats(0.01, 5), st.floats(1e-9, 0.5), st.integers(1, 200))
    def test_group_round_trip(self, eps, delta, m):
        target = PrivacyBudget(eps, delta)
        back = privacy.group_forward(privacy.group_invert(target, m), m)
        assert back.epsilon == pytest.approx(eps, rel=1e-12)
        assert back.delta == pytest.approx(delta, rel=1e-12)

    @given(st.floats(0.05, 0.95), st.floats(1e-8, 0.25), st.integers(1, 100))
    def test_monotone_in_m(self, eps, delta, m):
        b = PrivacyBudget(eps, delta)
        for split in (privacy.basic_split, privacy.advanced_split, privacy.group_invert):
            lo, hi = split(b, m), split(b, m + 1)
            assert hi.epsilon <= lo.epsilon and hi.delta <= lo.delta

    @given(st.floats(0.05, 0.95), st.floats(1e-8, 0.25), st.integers(2, 500))
    def test_advanced_versus_basic_epsilon(self, eps, delta, m):
        # advanced beats basic exactly while m <= 8 ln(2/delta)
        adv = privacy.advanced_split(PrivacyBudget(eps, delta), m).epsilon
        crossover = 8 * math.log(2 / delta)
        if m < crossover * (1 - 1e-9):
            assert adv <= eps / m
        elif m > crossover * (1 + 1e-9):
            assert adv > eps / m

    def test_gaussian_sigma(self):
        s = privacy.gaussian_sigma_for(PrivacyBudget(1, 1e-5), 1)
        assert s == pytest.approx(math.sqrt(2 * math.log(125000)))
        assert s == pytest.approx(4.84, abs=0.005)
        assert privacy.gaussian_sigma_for(PrivacyBudget(1, 1e-5), 2) == pytest.approx(2 * s)
        assert privacy.gaussian_sigma_for(PrivacyBudget(0.5, 1e-5), 1) == pytest.approx(2 * s)
        with pytest.raises(BudgetError):
            privacy.gaussian_sigma_for(PrivacyBudget(1), 1)
        with pytest.raises(BudgetError):
            privacy.gaussian_sigma_for(PrivacyBudget(2, 1e-5), 1)
