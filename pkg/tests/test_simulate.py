import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stream_meta.simulate import (
    SCENARIOS,
    ScenarioConfig,
    experiment_observations,
    generate_dataset,
    inverse_gamma,
    observe_experiment,
    scenario_params,
    truncated_normal,
)


def chi2_draws(n, reps, seed=0, sigma2=0.7):
    rng = np.random.default_rng(seed)
    s2 = np.array([observe_experiment(rng, 1.5, sigma2, n)[1] for _ in range(reps)])
    return (n - 1) * s2 / sigma2


class TestScenarioParams:
    @pytest.mark.parametrize("sid, expected", [
        ("i", (1, 1, 1, 10, 2)),
        ("ii", (1, 1, 1, 5, 0.5)),
        ("iii", (0, 0, 0, 10, 2)),
        ("iv", (0, 0, 0, 5, 0.5)),
    ])
    def test_table(self, sid, expected):
        c = scenario_params(sid)
        assert (c.a1, c.b1, c.c1, c.d1, c.d2) == expected
        assert (c.m, c.J, c.K, c.t_range, c.n_range) == (80, 30, 6, (1, 24), (100, 10000))

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            scenario_params("v")

    def test_overrides(self):
        c = scenario_params("i", m=40, seed=3)
        assert c.m == 40 and c.seed == 3

    @pytest.mark.parametrize("kw", [{"m": 1}, {"J": 0}, {"K": 0}, {"d1": 0.0},
                                    {"n_range": (1, 10)}, {"t_range": (5, 1)}])
    def test_invalid(self, kw):
        base = dict(zip(("a1", "b1", "c1", "d1", "d2"), SCENARIOS["i"]))
        base.update(kw)
        with pytest.raises(ValueError):
            ScenarioConfig(**base)


class TestSamplers:
    def test_truncated_normal_support(self):
        rng = np.random.default_rng(0)
        x = np.array([truncated_normal(rng, 0.0, 2.0) for _ in range(4000)])
        assert x.min() >= 0
        # half-normal mean sd * sqrt(2/pi)
        assert x.mean() == pytest.approx(2.0 * math.sqrt(2 / math.pi), rel=0.05)

    def test_inverse_gamma_shape_scale(self):
        # mean scale / (shape - 1); shape 3 keeps the variance finite for the check
        x = inverse_gamma(np.random.default_rng(1), 3.0, 4.0, 200_000)
        assert x.mean() == pytest.approx(2.0, rel=0.02)
        assert np.median(x) == pytest.approx(4.0 / 2.674060313723561, rel=0.02)


class TestObserveExperiment:
    def test_streaming_matches_direct(self):
        cfg = scenario_params("i", m=5, seed=2)
        d, truth = generate_dataset(cfg)
        for i, r in enumerate(d.records):
            obs = experiment_observations(cfg, i, truth.theta[i], truth.sigma2[i], r.n)
            assert obs.size == r.n
            assert r.y == pytest.approx(obs.mean(), abs=1e-10)
            assert r.s2 == pytest.approx(obs.var(ddof=1) / r.n, abs=1e-10)

    @given(n=st.integers(2, 9000), seed=st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_chunk_merge(self, n, seed):
        mean, s2 = observe_experiment(np.random.default_rng(seed), 0.3, 2.0, n)
        rng = np.random.default_rng(seed)
        sd = math.sqrt(n * 2.0)
        raw = np.concatenate([rng.normal(0.3, sd, min(4096, n - s)) for s in range(0, n, 4096)])
        assert mean == pytest.approx(raw.mean(), abs=1e-10)
        assert s2 == pytest.approx(raw.var(ddof=1) / n, rel=1e-10)

    def test_unbiased_for_sigma2(self):
        # E[S^2 | sigma^2] = sigma^2 over 1000 regenerations
        x = chi2_draws(200, 1000, seed=5) / 199
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 1.0) < 3 * se

    @pytest.mark.parametrize("n", [5, 50, 500])
    def test_gamma_law(self, n):
        x = chi2_draws(n, 5000, seed=n)
        se_mean = x.std(ddof=1) / math.sqrt(x.size)
        dev2 = (x - x.mean()) ** 2
        se_var = dev2.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - (n - 1)) < 3 * se_mean
        assert abs(x.var(ddof=1) - 2 * (n - 1)) < 3 * se_var


class TestGenerateDataset:
    def test_shapes_and_labels(self):
        d, truth = generate_dataset(scenario_params("i", m=30, J=5, K=3, seed=1))
        assert d.m == 30 and d.J == 5 and d.K == 3 and d.q == 1
        assert truth.ids == tuple(d.ids)
        assert np.all(d.s2 > 0) and np.all(truth.sigma2 > 0)
        assert np.all((d.n >= 100) & (d.n <= 10000))
        assert np.all((d.t >= 1) & (d.t <= 24)) and np.all(d.t == np.round(d.t))
        x = d.X[:, 0]
        assert np.all((x >= 1) & (x <= 10))

    def test_deterministic(self):
        cfg = scenario_params("ii", m=20, seed=7)
        a, ta = generate_dataset(cfg)
        b, tb = generate_dataset(cfg)
        assert a == b
        np.testing.assert_array_equal(ta.theta, tb.theta)
        np.testing.assert_array_equal(ta.sigma2, tb.sigma2)
        c, _ = generate_dataset(cfg.with_(seed=8))
        assert c != a

    def test_scenario_iii_has_no_time_term(self):
        t_all, resid_all = [], []
        for seed in range(20):
            d, truth = generate_dataset(scenario_params("iii", m=100, J=1, K=1, seed=seed))
            # one group each: theta = const + 0.5 x, so the residual after removing 0.5 x is flat in t
            t_all.append(d.t)
            resid_all.append(truth.theta - 0.5 * d.X[:, 0] - (truth.theta - 0.5 * d.X[:, 0]).mean())
        t = np.concatenate(t_all)
        r = np.concatenate(resid_all)
        np.testing.assert_allclose(r, 0.0, atol=1e-10)
        assert t.std() > 0

    def test_scenario_iii_regression(self):
        d, truth = generate_dataset(scenario_params("iii", m=2000, J=30, K=6, seed=4))
        ph = 2 * np.pi * d.t / 12
        a_idx = np.array([d.levels_a.index(r.group_a) for r in d.records])
        b_idx = np.array([d.levels_b.index(r.group_b) for r in d.records])
        Z = np.column_stack([np.eye(d.J)[a_idx], np.eye(d.K)[b_idx][:, 1:], d.X[:, 0]])
        B = np.column_stack([np.sin(ph), np.cos(ph), d.t / 12])
        A = np.column_stack([Z, B])
        noise = np.random.default_rng(0).normal(0, 1.0, d.m)
        coef, *_ = np.linalg.lstsq(A, truth.theta + noise, rcond=None)
        cov = np.linalg.inv(A.T @ A)
        se = np.sqrt(np.diag(cov))[-3:]
        assert np.all(np.abs(coef[-3:]) < 3 * se)

    def test_scenario_i_time_term(self):
        cfg = scenario_params("i", m=50, J=1, K=1, seed=3)
        d, truth = generate_dataset(cfg)
        ph = 2 * np.pi * d.t / 12
        r = truth.theta - 0.5 * d.X[:, 0] - np.sin(ph) - np.cos(ph) - d.t / 12
        np.testing.assert_allclose(r, r[0], atol=1e-10)
