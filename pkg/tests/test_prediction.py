import math

import numpy as np
import pytest

from conftest import toy_dataset
from stream_meta.data import Dataset, ExperimentRecord
from stream_meta.model import ContractError, Model, ModelSpec
from stream_meta.prediction import (
    _TIME,
    SUMMARY_HEADER,
    PredictionTask,
    Predictions,
    _stream,
    predict,
    predict_sigma2,
    predict_theta,
    predict_y,
    read_summary,
    summarize,
    write_predictions,
    write_summary,
)
from stream_meta.sampler import PosteriorDraws, SamplerConfig, run_chains


def record(i, t=3.0, a="a0", b="b0", x=0.0, n=10, y=1.0, s2=1.0):
    return ExperimentRecord(id=f"t{i}", y=y, s2=s2, n=n, t=t, group_a=a, group_b=b, x=(x,))


def pinned_draws(spec, d, rows=None, D=1, **values):
    """Draws where every row holds the same constrained values (or the given ``rows``)."""
    model = Model(spec, d)
    lay = model.layout
    if rows is None:
        row = np.zeros(lay.size)
        for b in lay.blocks:
            if b.positive:
                row[b.slice] = 1.0
        for name, v in values.items():
            row[lay[name].slice] = v
        rows = np.tile(row, (D, 1))
    meta = {
        "kind": spec.kind, "period": spec.period, "jitter": spec.jitter,
        "fixed_effect_sd": spec.priors.fixed_effect_sd,
        "levels_a": list(model.levels_a), "levels_b": list(model.levels_b),
        "time_grid": [float(v) for v in model.time_grid],
        "mean_s2": float(np.mean(d.s2)), "q": d.q,
    }
    k = rows.shape[0]
    return PosteriorDraws([np.asarray(rows, dtype=float)], lay, np.ones(1), np.ones(1),
                          np.zeros(1, dtype=int), meta), k


def random_rows(spec, d, D, seed=0):
    model = Model(spec, d)
    rng = np.random.default_rng(seed)
    return np.array([model.constrain_flat(rng.uniform(-1, 1, model.dim)) for _ in range(D)])


def fitted_theta(spec, d, draws):
    """Linear predictor of each training record, recomputed from the named blocks."""
    p = draws.layout.unpack(draws.pooled())
    ia = [draws.meta["levels_a"].index(r.group_a) for r in d.records]
    ib = [draws.meta["levels_b"].index(r.group_b) for r in d.records]
    it = [draws.meta["time_grid"].index(v) for v in d.t]
    return (p["alpha_theta"] + p["theta_a"][:, ia] + p["theta_b"][:, ib]
            + p["theta_c"][:, it] + p["beta_theta"] @ d.X.T)


class TestPredictTheta:
    def test_duplicate_training_record(self):
        d = toy_dataset(3)
        spec = ModelSpec("STREAM")
        draws, _ = pinned_draws(spec, d, rows=random_rows(spec, d, 50))
        test = Dataset(d.records)
        got = predict_theta(PredictionTask(test, draws, spec, seed=1))
        np.testing.assert_allclose(got, fitted_theta(spec, d, draws), atol=1e-6)

    def test_fixed_effect_collapses_to_intercept(self):
        d = toy_dataset(0)
        spec = ModelSpec("FE")
        draws, _ = pinned_draws(spec, d, alpha_theta=2.75)
        test = Dataset((record(0, a="a1", b="b0", x=0.0),))
        assert predict_theta(PredictionTask(test, draws, spec))[0, 0] == pytest.approx(2.75)

    def test_two_point_gp_hand_oracle(self):
        recs = (record(0, t=1.0), record(1, t=4.0))
        d = Dataset(recs)
        spec = ModelSpec("RE-GP")
        sp2, lp, tc = 1.7, 0.8, np.array([0.4, -0.9])
        draws, _ = pinned_draws(spec, d, sigma_p2=sp2, l_p=lp, theta_c=tc)
        test = Dataset((record(9, t=2.5),))
        got = predict_theta(PredictionTask(test, draws, spec, seed=42))[0, 0]

        def k(s, t):
            return sp2 * math.exp(-2 * math.sin(math.pi * abs(s - t) / 12) ** 2 / lp ** 2)

        K = np.array([[k(1, 1), k(1, 4)], [k(4, 1), k(4, 4)]]) + 1e-8 * sp2 * np.eye(2)
        ks = np.array([k(1, 2.5), k(4, 2.5)])
        Kinv = np.linalg.inv(K)
        mean = ks @ Kinv @ tc
        var = k(2.5, 2.5) - ks @ Kinv @ ks
        z = _stream(42, _TIME).standard_normal((1, 1))[0, 0]
        assert got == pytest.approx(mean + math.sqrt(var) * z, abs=1e-8)

    def test_period_shift_reuses_cycle(self):
        d = toy_dataset(1)
        spec = ModelSpec("RE-GP")
        draws, _ = pinned_draws(spec, d, rows=random_rows(spec, d, 20, seed=3))
        shifted = Dataset(tuple(record(i, t=r.t + 12.0, a=r.group_a, b=r.group_b, x=r.x[0])
                                for i, r in enumerate(d.records)))
        base = Dataset(tuple(record(i, t=r.t, a=r.group_a, b=r.group_b, x=r.x[0])
                             for i, r in enumerate(d.records)))
        a = predict_theta(PredictionTask(base, draws, spec))
        b = predict_theta(PredictionTask(shifted, draws, spec))
        np.testing.assert_allclose(b, a, atol=1e-3)

    def test_month_effect_copied(self):
        d = toy_dataset(2)
        spec = ModelSpec("RE-M")
        draws, _ = pinned_draws(spec, d, theta_c=np.arange(1.0, 5.0))
        test = Dataset((record(0, t=3.0 + 24.0),))
        got = predict_theta(PredictionTask(test, draws, spec))
        k = draws.meta["time_grid"].index(3.0)
        assert got[0, 0] == pytest.approx(k + 1.0)

    @pytest.mark.parametrize("kind, var", [("RE", 4.0), ("FE", 1000.0)])
    def test_unseen_group_draws(self, kind, var):
        d = toy_dataset(0)
        spec = ModelSpec(kind)
        extra = {"tau_a2": 4.0} if kind == "RE" else {}
        draws, _ = pinned_draws(spec, d, D=20_000, **extra)
        test = Dataset((record(0, a="new", b="b0"), record(1, a="new", b="b1")))
        th = predict_theta(PredictionTask(test, draws, spec, seed=5))
        # one fresh effect per unseen label, shared by records carrying it
        np.testing.assert_array_equal(th[:, 0], th[:, 1])
        assert th[:, 0].var() == pytest.approx(var, rel=0.05)

    def test_median_invariant_to_draw_order(self):
        d = toy_dataset(4)
        spec = ModelSpec("RE-GP")
        rows = random_rows(spec, d, 40, seed=9)
        perm = np.random.default_rng(0).permutation(40)
        a, _ = pinned_draws(spec, d, rows=rows)
        b, _ = pinned_draws(spec, d, rows=rows[perm])
        test = Dataset(d.records)
        ma = np.median(predict_theta(PredictionTask(test, a, spec)), axis=0)
        mb = np.median(predict_theta(PredictionTask(test, b, spec)), axis=0)
        np.testing.assert_array_equal(ma, mb)


class TestPredictSigma2:
    def test_doubling_n(self):
        d = toy_dataset(1)
        spec = ModelSpec("STREAM")
        draws, _ = pinned_draws(spec, d, rows=random_rows(spec, d, 30, seed=2))
        task = PredictionTask(Dataset(d.records), draws, spec, seed=8)
        a = predict_sigma2(task, n=d.n)
        b = predict_sigma2(task, n=2 * d.n)
        np.testing.assert_allclose(np.log(b) - np.log(a), -math.log(2.0), atol=1e-12)

    def test_degenerate_lognormal(self):
        d = toy_dataset(0)
        spec = ModelSpec("RE-MV")
        draws, _ = pinned_draws(spec, d, alpha_sigma=-0.3, tau_sigma2=1e-30)
        task = PredictionTask(Dataset((record(0, a="a1", b="b1", n=2),)), draws, spec)
        assert predict_sigma2(task, n=[1])[0, 0] == pytest.approx(math.exp(-0.3), rel=1e-12)

    def test_pooled_mean_without_variance_model(self):
        d = Dataset((record(0, s2=1.0, t=1.0), record(1, s2=3.0, t=2.0, a="a1", b="b1")))
        spec = ModelSpec("FE")
        draws = run_chains(spec, d, SamplerConfig(chains=1, warmup=100, samples=10), n_jobs=1)
        test = Dataset((record(5, n=7), record(6, n=900)))
        np.testing.assert_array_equal(predict_sigma2(PredictionTask(test, draws, spec)), 2.0)

    def test_bad_sample_sizes(self):
        d = toy_dataset(0)
        spec = ModelSpec("STREAM")
        draws, _ = pinned_draws(spec, d)
        task = PredictionTask(Dataset(d.records), draws, spec)
        with pytest.raises(ContractError):
            predict_sigma2(task, n=d.n[:2])
        with pytest.raises(ContractError):
            predict_sigma2(task, n=np.zeros(d.m))


class TestPredictY:
    def _task(self):
        d = toy_dataset(0)
        spec = ModelSpec("RE")
        draws, _ = pinned_draws(spec, d)
        return PredictionTask(Dataset(d.records[:3]), draws, spec, seed=3)

    def test_zero_variance(self):
        theta = np.random.default_rng(0).normal(size=(1, 3))
        y = predict_y(self._task(), theta, np.zeros((1, 3)))
        np.testing.assert_array_equal(y, theta)

    def test_total_expectation_and_variance(self):
        rng = np.random.default_rng(1)
        task = self._task()
        # many draws through one task: tile the pinned draw
        draws, _ = pinned_draws(task.spec, toy_dataset(0), D=200_000)
        task = PredictionTask(task.test, draws, task.spec, seed=4)
        theta = rng.normal(2.0, 1.5, (200_000, 3))
        sigma2 = rng.lognormal(0.0, 0.5, (200_000, 3))
        y = predict_y(task, theta, sigma2)
        for j in range(3):
            diff = y[:, j] - theta[:, j]
            assert abs(diff.mean()) < 3 * diff.std() / math.sqrt(diff.size)
            target = theta[:, j].var() + sigma2[:, j].mean()
            dev = (y[:, j] - y[:, j].mean()) ** 2
            assert abs(y[:, j].var() - target) < 3 * dev.std() / math.sqrt(dev.size) + 0.01

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            predict_y(self._task(), np.zeros((1, 3)), np.zeros((1, 2)))


class TestTaskContract:
    def test_kind_mismatch(self):
        d = toy_dataset(0)
        draws, _ = pinned_draws(ModelSpec("RE"), d)
        with pytest.raises(ContractError, match="draws come from"):
            PredictionTask(Dataset(d.records), draws, ModelSpec("STREAM"))

    def test_covariate_width(self):
        d = toy_dataset(0)
        draws, _ = pinned_draws(ModelSpec("RE"), d)
        with pytest.raises(ContractError, match="q="):
            PredictionTask(toy_dataset(0, q=2), draws, ModelSpec("RE"))

    def test_missing_meta(self):
        d = toy_dataset(0)
        draws, _ = pinned_draws(ModelSpec("RE"), d)
        del draws.meta["levels_a"]
        with pytest.raises(ContractError, match="levels_a"):
            PredictionTask(Dataset(d.records), draws, ModelSpec("RE"))

    def test_missing_block(self):
        d = toy_dataset(0)
        draws, _ = pinned_draws(ModelSpec("RE"), d)
        draws.meta["kind"] = "STREAM"
        with pytest.raises(ContractError, match="lack"):
            PredictionTask(Dataset(d.records), draws, ModelSpec("STREAM"))


@pytest.fixture(scope="module")
def fitted():
    d = toy_dataset(6, m=12, J=3, K=2, L=4)
    spec = ModelSpec("STREAM")
    draws = run_chains(spec, d, SamplerConfig(chains=2, warmup=150, samples=50, seed=2), n_jobs=1)
    test = Dataset((record(0, t=3.0, a="a0", b="b1", x=0.2, n=30),
                    record(1, t=11.0, a="zz", b="b0", x=-0.5, n=200)))
    return predict(PredictionTask(test, draws, spec, seed=2))


class TestEndToEnd:
    def test_finite_and_shaped(self, fitted):
        for v in (fitted.theta, fitted.sigma2, fitted.y):
            assert v.shape == (100, 2) and np.all(np.isfinite(v))
        assert np.all(fitted.sigma2 > 0)

    def test_summary_rows(self, fitted):
        rows = summarize(fitted, 0.1)
        assert [r[0] for r in rows] == ["t0", "t1"]
        for r, j in zip(rows, range(2)):
            assert r[1] == pytest.approx(np.median(fitted.theta[:, j]))
            assert r[3] <= r[2] <= r[4]

    def test_files_round_trip(self, fitted, tmp_path):
        write_predictions(fitted, tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "test_id,draw,theta_tilde,sigma2_tilde,y_tilde"
        assert len(lines) == 1 + 200
        write_summary(fitted, tmp_path / "s.csv")
        back = read_summary(tmp_path / "s.csv")
        rows = summarize(fitted)
        assert back == {r[0]: tuple(r[1:]) for r in rows}
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(SUMMARY_HEADER)

    def test_predict_rejects_non_finite(self, monkeypatch):
        import stream_meta.prediction as pm

        d = toy_dataset(0)
        spec = ModelSpec("RE")
        draws, _ = pinned_draws(spec, d)
        monkeypatch.setattr(pm, "predict_theta", lambda task: np.full((1, d.m), np.nan))
        with pytest.raises(FloatingPointError):
            pm.predict(PredictionTask(Dataset(d.records), draws, spec))

    def test_predictions_type(self, fitted):
        assert isinstance(fitted, Predictions) and fitted.ids == ("t0", "t1")
