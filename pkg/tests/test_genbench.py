import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpfreq import core, genbench
from dpfreq.core import BUNDLE, CUMULATIVE, FIXED, SINGLETON, TIME
from dpfreq.estimators import EstimatorConfig
from dpfreq.genbench import GeneratorError, GeneratorSpec, generate


class TestGenerate:
    def test_deterministic(self):
        spec = GeneratorSpec(T=100, U=10, seed=4)
        a, b = generate(spec), generate(spec)
        assert a.entries == b.entries and a.num_events > 0
        assert generate(GeneratorSpec(T=100, U=10, seed=5)).entries != a.entries

    def test_singleton_rate_one(self):
        s = generate(GeneratorSpec(T=200, U=7, regime=SINGLETON, rate=1.0, seed=1))
        assert s.times.tolist() == list(range(1, 201))
        assert set(s.counts.tolist()) == {1}

    def test_zipf_zero_is_uniform(self):
        s = generate(GeneratorSpec(kind="zipf", T=10_000, U=20, zipf_exponent=0.0, seed=3))
        counts = s.item_counts()
        assert counts.sum() > 9000
        assert stats.chisquare(counts).pvalue > 0.001

    def test_zipf_skew(self):
        s = generate(GeneratorSpec(kind="zipf", T=5000, U=20, zipf_exponent=1.5, seed=3))
        c = s.item_counts()
        assert c[0] > 3 * c[5]

    @pytest.mark.parametrize("kind", ["uniform", "zipf", "bursty"])
    @pytest.mark.parametrize("regime", [BUNDLE, SINGLETON])
    def test_outputs_validate(self, kind, regime):
        for seed in range(5):
            spec = GeneratorSpec(kind=kind, T=150, U=9, regime=regime, rate=0.7, seed=seed)
            s = generate(spec)
            assert core.validate_stream(s) is None and s.regime == regime

    def test_infeasible(self):
        with pytest.raises(GeneratorError):
            generate(GeneratorSpec(regime=SINGLETON, rate=1.5))
        with pytest.raises(GeneratorError):
            generate(GeneratorSpec(kind="gamma"))
        with pytest.raises(GeneratorError):
            GeneratorSpec.from_dict({"kind": "uniform", "horizon": 5})

    def test_spec_round_trip(self):
        spec = GeneratorSpec.from_dict({"kind": "hard-marginal-embedding", "window": 2,
                                        "vectors": [[1, 0], [0, 1]], "k": 2, "T": 4})
        assert GeneratorSpec.from_dict(spec.as_dict()) == spec
        assert core.validate_stream(generate(spec)) is None


class TestHardRange:
    def test_example(self):
        s = genbench.generate_hard_range([2, 2, 5], 3, T=6)
        t1, t2 = core.query_family(CUMULATIVE, 6)
        assert core.exact_table(s, 3, t1, t2).tolist() == [0, 2, 2, 2, 3, 3]

    def test_empty_points(self):
        s = genbench.generate_hard_range([], 2, T=5)
        t1, t2 = core.query_family(CUMULATIVE, 5)
        assert not core.exact_table(s, 2, t1, t2).any()

    def test_k_one_is_point_list(self):
        s = genbench.generate_hard_range([3, 1, 3], 1, T=4)
        assert sorted(zip(s.times.tolist(), s.items.tolist())) == [(1, 2), (3, 1), (3, 3)]

    @settings(max_examples=100)
    @given(st.lists(st.integers(1, 40), max_size=25), st.integers(1, 5))
    def test_identity(self, points, k):
        T = 40
        s = genbench.generate_hard_range(points, k, T=T)
        t1, t2 = core.query_family(CUMULATIVE, T)
        pts = np.array(points, dtype=np.int64)
        want = [int(np.sum(pts <= t)) for t in range(1, T + 1)]
        assert core.exact_table(s, k, t1, t2).tolist() == want

    def test_errors(self):
        with pytest.raises(GeneratorError):
            genbench.generate_hard_range([0], 1)
        with pytest.raises(GeneratorError):
            genbench.generate_hard_range([9], 1, T=5)


class TestHardMarginal:
    def test_example(self):
        s = genbench.generate_hard_marginal([(1, 0), (1, 1)], 3, 2, T=6)
        assert core.exact_table(s, 2, [1, 4], [3, 6]).tolist() == [2, 1]

    def test_zero_vectors(self):
        s = genbench.generate_hard_marginal([(0, 0, 0)] * 4, 2, 3)
        t1, t2 = core.query_family(FIXED, 6, 2)
        assert not core.exact_table(s, 3, t1, t2).any()

    def test_one_dimension(self):
        s = genbench.generate_hard_marginal([(1,), (0,), (1,)], 5, 2)
        assert core.exact_freq_at_least(s, 2, 1, 5) == 2

    @settings(max_examples=100)
    @given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 4), st.data())
    def test_identity(self, d, W, k, data):
        n = data.draw(st.integers(1, 8))
        X = np.array(data.draw(st.lists(st.lists(st.integers(0, 1), min_size=d, max_size=d),
                                        min_size=n, max_size=n)))
        s = genbench.generate_hard_marginal(X, W, k)
        starts = W * np.arange(d) + 1
        assert core.exact_table(s, k, starts, starts + W - 1).tolist() == X.sum(axis=0).tolist()

    def test_errors(self):
        with pytest.raises(GeneratorError):
            genbench.generate_hard_marginal([(1, 0)], 3, 1, T=5)
        with pytest.raises(GeneratorError):
            genbench.generate_hard_marginal([(1, 0), (1,)], 3, 1)
        with pytest.raises(GeneratorError):
            genbench.generate_hard_marginal([(2, 0)], 3, 1)


class TestHarness:
    def stream(self, T=40):
        return generate(GeneratorSpec(T=T, U=6, seed=9))

    @pytest.mark.parametrize("query,extra", [(CUMULATIVE, {}), (FIXED, {"window": 5}),
                                             (TIME, {}), (TIME, {"level": "item"})])
    def test_no_noise_zero_error(self, query, extra):
        cfg = EstimatorConfig(query=query, noise="none", **extra)
        rep = genbench.run_experiment(self.stream(), cfg, trials=3)
        assert rep.summary()["max_error"] == 0 and rep.trials == 3

    def test_same_seed_same_report(self):
        cfg = EstimatorConfig(query=TIME, seed=11)
        a = genbench.run_experiment(self.stream(), cfg, trials=1)
        b = genbench.run_experiment(self.stream(), cfg, trials=1)
        assert a.estimate.tobytes() == b.estimate.tobytes()
        sa, sb = a.summary(), b.summary()
        sa.pop("wall_time"), sb.pop("wall_time")
        assert sa == sb

    def test_trials_differ(self):
        rep = genbench.run_experiment(self.stream(), EstimatorConfig(seed=1), trials=2)
        first, second = rep.estimate.reshape(2, -1)
        assert not np.array_equal(first, second)

    def test_summary_recomputable_from_rows(self, tmp_path):
        rep = genbench.run_experiment(self.stream(), EstimatorConfig(query=TIME, seed=2), 4)
        rep.write_rows(tmp_path / "rows.csv")
        with open(tmp_path / "rows.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == genbench.ROW_HEADER
        err = np.array([float(r["abs_error"]) for r in rows])
        est = np.array([float(r["estimate"]) for r in rows])
        exact = np.array([float(r["exact"]) for r in rows])
        assert np.array_equal(err, np.abs(est - exact))
        again = genbench.summarize(rep.trial, err, rep.trials)
        summary = rep.summary()
        for key, value in again.items():
            assert summary[key] == value
        per_query = err.reshape(4, -1)
        assert summary["alpha"] == np.quantile(per_query, 0.9, axis=0).max()

    def test_cumulative_harness_timing(self):
        s = generate(GeneratorSpec(T=1024, U=64, seed=1))
        rep = genbench.run_experiment(s, EstimatorConfig(seed=3), trials=50)
        summary = rep.summary()
        assert math.isfinite(summary["alpha"]) and summary["alpha"] > 0
        assert rep.wall_time < 10

    def test_max_queries_subset(self):
        s = self.stream(60)
        rep = genbench.run_experiment(s, EstimatorConfig(query=TIME, noise="none"), 2,
                                      max_queries=100)
        assert rep.summary()["n_queries"] == 100 and rep.summary()["max_error"] == 0

    def test_rejects_singleton_config_on_bundle(self):
        with pytest.raises(ValueError):
            genbench.run_experiment(self.stream(), EstimatorConfig(regime=SINGLETON))


class TestSweep:
    def test_rows_and_determinism(self, tmp_path):
        gen = GeneratorSpec(T=64, U=8, seed=1)
        cfg = EstimatorConfig(seed=4)
        rows = genbench.sweep("T", [32, 64, 128], cfg, gen, trials=3)
        assert [r["value"] for r in rows] == [32, 64, 128]
        genbench.write_summary(tmp_path / "a.csv", rows)
        genbench.write_summary(tmp_path / "b.csv", genbench.sweep("T", [32, 64, 128], cfg, gen, 3))
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
        assert header == genbench.SUMMARY_HEADER

    def test_k_sweep_monotone(self):
        gen = GeneratorSpec(T=48, U=8, seed=1)
        rows = genbench.sweep("k", [1, 2, 4, 8], EstimatorConfig(query=TIME, seed=2), gen, 20)
        alphas = [r["alpha"] for r in rows]
        assert alphas == sorted(alphas)

    def test_epsilon_sweep_halves_error(self):
        gen = GeneratorSpec(T=256, U=16, seed=1)
        rows = genbench.sweep("epsilon", [0.5, 1.0, 2.0], EstimatorConfig(seed=2), gen, 50)
        e = [r["mean_max_error"] for r in rows]
        for lo, hi in zip(e, e[1:]):
            assert 0.75 <= (lo / hi) / 2 <= 1.25

    def test_errors(self):
        gen, cfg = GeneratorSpec(), EstimatorConfig()
        with pytest.raises(ValueError):
            genbench.sweep("U", [1], cfg, gen)
        with pytest.raises(ValueError):
            genbench.sweep("T", [64, 32], cfg, gen)


class TestCoarseRatio:
    def test_identical_and_shifted(self):
        rng = np.random.default_rng(0)
        a = rng.laplace(0, 1, 100_000)
        b = rng.laplace(0, 1, 100_000)
        assert genbench.coarse_log_ratio(a, b) < 0.1
        assert genbench.coarse_log_ratio(a, b + 5) > 2

    def test_discrete_ties(self):
        assert genbench.coarse_log_ratio([0, 0, 1, 1], [0, 1, 1, 1]) == pytest.approx(math.log(2))
