"""Posterior-predictive draws for future experiments.

Each posterior draw yields one future effect, variance and observation per
test experiment. Randomness beyond the posterior draws themselves (fresh
group effects, conditional GP noise, log-variance noise, observation noise)
comes from separate seeded streams, one per purpose, each generated as a
whole ``draws x columns`` matrix so results do not depend on call order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import io
from .data import Dataset
from .evaluation import hpd_interval
from .kernel import KernelParams, gp_condition
from .model import ContractError, ModelSpec, month_index
from .sampler import PosteriorDraws

__all__ = [
    "PredictionTask",
    "Predictions",
    "predict_theta",
    "predict_sigma2",
    "predict_y",
    "predict",
    "summarize",
    "write_predictions",
    "write_summary",
    "read_summary",
    "SUMMARY_HEADER",
]

_PREDICT = 0x70726564  # "pred"
# stream tags
_NEW_A, _NEW_B, _TIME, _NEW_MONTH, _NEW_DA, _NEW_DB, _LOG_SIGMA, _OBS = range(8)

SUMMARY_HEADER = ["test_id", "theta_median", "y_median", "y_hpd_lower", "y_hpd_upper"]


def _stream(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([seed, _PREDICT, tag]))


@dataclass(frozen=True)
class PredictionTask:
    """Future experiments ``test`` plus the fit (``draws`` of ``spec``) to predict from."""

    test: Dataset
    draws: PosteriorDraws
    spec: ModelSpec
    seed: int = 0

    def __post_init__(self):
        meta = self.draws.meta
        if meta.get("kind", self.spec.kind) != self.spec.kind:
            raise ContractError(f"draws come from {meta['kind']!r}, not {self.spec.kind!r}")
        if "period" in meta and float(meta["period"]) != float(self.spec.period):
            raise ContractError("spec period differs from the fitted period")
        if "q" in meta and int(meta["q"]) != self.test.q:
            raise ContractError(f"test data has q={self.test.q}, fit used q={meta['q']}")
        needed = ["alpha_theta", "theta_a", "theta_b", "beta_theta"]
        if self.spec.time_effect:
            needed.append("theta_c")
        if self.spec.time_effect == "gp":
            needed += ["sigma_p2", "l_p"]
        if self.spec.random_effects:
            needed += ["tau_a2", "tau_b2"]
        if self.spec.variance_model:
            needed += ["alpha_sigma", "delta_a", "delta_b", "beta_sigma", "tau_sigma2"]
            if self.spec.random_effects:
                needed += ["tau_c2", "tau_d2"]
        missing = [b for b in needed if b not in self.draws]
        if missing:
            raise ContractError(f"draws lack blocks {missing} required by {self.spec.kind}")
        if self.draws.layout["beta_theta"].size != self.test.q:
            raise ContractError("beta_theta width does not match the test covariates")
        for key in ("levels_a", "levels_b", "time_grid"):
            if key not in meta:
                raise ContractError(f"draws meta lacks {key!r}")

    @property
    def train_time_grid(self) -> np.ndarray:
        return np.asarray(self.draws.meta["time_grid"], dtype=float)

    @property
    def fe_var(self) -> float:
        sd = self.draws.meta.get("fixed_effect_sd", self.spec.priors.fixed_effect_sd)
        return float(sd) ** 2


@dataclass(frozen=True)
class Predictions:
    ids: tuple
    theta: np.ndarray
    sigma2: np.ndarray
    y: np.ndarray


def _group_effects(task, pooled, block, tau_block, labels, levels, tag):
    """Per-draw effect for each test record's label (draws x m_te)."""
    D = pooled[block].shape[0]
    index = {v: k for k, v in enumerate(levels)}
    unseen = sorted({lab for lab in labels if lab not in index})
    fresh = np.zeros((D, 0))
    if unseen:
        z = _stream(task.seed, tag).standard_normal((D, len(unseen)))
        if task.spec.random_effects:
            fresh = np.sqrt(pooled[tau_block][:, :1]) * z
        else:
            fresh = math.sqrt(task.fe_var) * z
    slot = {lab: k for k, lab in enumerate(unseen)}
    cols = [pooled[block][:, index[lab]] if lab in index else fresh[:, slot[lab]]
            for lab in labels]
    return np.column_stack(cols) if cols else np.zeros((D, 0))


def _gp_time_effects(task, pooled):
    t_test = task.test.t
    grid = task.train_time_grid
    tc = pooled["theta_c"]
    D = tc.shape[0]
    known = {v: k for k, v in enumerate(grid)}
    novel = np.array(sorted({v for v in t_test if v not in known}), dtype=float)
    fresh = np.zeros((D, novel.size))
    if novel.size:
        z = _stream(task.seed, _TIME).standard_normal((D, novel.size))
        for d in range(D):
            kp = KernelParams(float(pooled["sigma_p2"][d, 0]), float(pooled["l_p"][d, 0]),
                              task.spec.period)
            cond = gp_condition(grid, tc[d], novel, kp, task.spec.jitter)
            w, V = np.linalg.eigh(cond.cov)
            fresh[d] = cond.mean + V @ (np.sqrt(np.clip(w, 0.0, None)) * z[d])
    slot = {v: k for k, v in enumerate(novel)}
    cols = [tc[:, known[v]] if v in known else fresh[:, slot[v]] for v in t_test]
    return np.column_stack(cols)


def _month_effects(task, pooled):
    months = month_index(task.test.t, task.spec.period).astype(float)
    grid = task.train_time_grid
    known = {v: k for k, v in enumerate(grid)}
    tc = pooled["theta_c"]
    D = tc.shape[0]
    novel = sorted({v for v in months if v not in known})
    fresh = math.sqrt(task.fe_var) * _stream(task.seed, _NEW_MONTH).standard_normal((D, len(novel)))
    slot = {v: k for k, v in enumerate(novel)}
    cols = [tc[:, known[v]] if v in known else fresh[:, slot[v]] for v in months]
    return np.column_stack(cols)


def _pooled(task):
    return task.draws.layout.unpack(task.draws.pooled())


def predict_theta(task: PredictionTask) -> np.ndarray:
    """Future effects, shape (draws, m_te).

    Training labels and times reuse the draw's fitted effects; unseen labels
    get a fresh effect from N(0, tau^2) (random-effect kinds) or the fixed-
    effect prior, unseen times are drawn from the draw's conditional GP and
    unseen months from the fixed-effect prior.
    """
    p = _pooled(task)
    test = task.test
    meta = task.draws.meta
    labels_a = [r.group_a for r in test.records]
    labels_b = [r.group_b for r in test.records]
    theta = (p["alpha_theta"][:, :1]
             + _group_effects(task, p, "theta_a", "tau_a2", labels_a, meta["levels_a"], _NEW_A)
             + _group_effects(task, p, "theta_b", "tau_b2", labels_b, meta["levels_b"], _NEW_B)
             + p["beta_theta"] @ test.X.T)
    te = task.spec.time_effect
    if te == "gp":
        theta = theta + _gp_time_effects(task, p)
    elif te == "month":
        theta = theta + _month_effects(task, p)
    return theta


def predict_sigma2(task: PredictionTask, n=None) -> np.ndarray:
    """Future sampling variances, shape (draws, m_te).

    ``n`` overrides the test records' sample sizes. Kinds without a variance
    model return the mean training S^2 for every draw and record.
    """
    test = task.test
    n = test.n if n is None else np.asarray(n, dtype=float)
    if n.shape != (test.m,):
        raise ContractError(f"need one sample size per test record ({test.m}), got {n.size}")
    if not np.all(n > 0):
        raise ContractError("sample sizes must be positive")
    D = task.draws.n_chains * task.draws.n_samples
    if not task.spec.variance_model:
        if "mean_s2" not in task.draws.meta:
            raise ContractError("draws meta lacks 'mean_s2'")
        return np.full((D, test.m), float(task.draws.meta["mean_s2"]))
    p = _pooled(task)
    meta = task.draws.meta
    labels_a = [r.group_a for r in test.records]
    labels_b = [r.group_b for r in test.records]
    mu = (p["alpha_sigma"][:, :1]
          + _group_effects(task, p, "delta_a", "tau_c2", labels_a, meta["levels_a"], _NEW_DA)
          + _group_effects(task, p, "delta_b", "tau_d2", labels_b, meta["levels_b"], _NEW_DB)
          + p["beta_sigma"] @ test.X.T
          - np.log(n)[None, :])
    z = _stream(task.seed, _LOG_SIGMA).standard_normal(mu.shape)
    return np.exp(mu + np.sqrt(p["tau_sigma2"][:, :1]) * z)


def predict_y(task: PredictionTask, theta=None, sigma2=None) -> np.ndarray:
    """Future observations N(theta~, sigma2~), shape (draws, m_te)."""
    theta = predict_theta(task) if theta is None else np.asarray(theta, dtype=float)
    sigma2 = predict_sigma2(task) if sigma2 is None else np.asarray(sigma2, dtype=float)
    if theta.shape != sigma2.shape:
        raise ContractError("theta and sigma2 matrices differ in shape")
    z = _stream(task.seed, _OBS).standard_normal(theta.shape)
    return theta + np.sqrt(sigma2) * z


def predict(task: PredictionTask) -> Predictions:
    theta = predict_theta(task)
    sigma2 = predict_sigma2(task)
    y = predict_y(task, theta, sigma2)
    for name, v in (("theta", theta), ("sigma2", sigma2), ("y", y)):
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite predictive {name} draws")
    return Predictions(tuple(task.test.ids), theta, sigma2, y)


def summarize(pred: Predictions, alpha=0.05) -> list[list]:
    """Rows of :data:`SUMMARY_HEADER`: median theta~, median y~ and the y~ HPD bounds."""
    theta_med = np.median(pred.theta, axis=0)
    y_med = np.median(pred.y, axis=0)
    rows = []
    for j, tid in enumerate(pred.ids):
        lo, hi = hpd_interval(pred.y[:, j], alpha)
        rows.append([tid, float(theta_med[j]), float(y_med[j]), lo, hi])
    return rows


def write_predictions(pred: Predictions, path) -> None:
    """Long-format CSV: test_id, draw, theta_tilde, sigma2_tilde, y_tilde."""
    rows = []
    for j, tid in enumerate(pred.ids):
        for d in range(pred.theta.shape[0]):
            rows.append([tid, d, pred.theta[d, j], pred.sigma2[d, j], pred.y[d, j]])
    io.write_csv(path, ["test_id", "draw", "theta_tilde", "sigma2_tilde", "y_tilde"], rows)


def write_summary(pred: Predictions, path, alpha=0.05) -> None:
    io.write_csv(path, SUMMARY_HEADER, summarize(pred, alpha))


def read_summary(path) -> dict:
    """Summary CSV as ``{test_id: (theta_median, y_median, lower, upper)}``."""
    header, rows = io.read_csv(path)
    if header != SUMMARY_HEADER:
        raise ValueError(f"{path}: expected columns {SUMMARY_HEADER}, got {header}")
    return {r[0]: tuple(float(v) for v in r[1:]) for r in rows}
