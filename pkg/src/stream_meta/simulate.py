"""Synthetic meta-analysis datasets with known effects and variances.

Group effects, variances and covariates follow the four benchmark scenarios;
each experiment's summary (mean and squared standard error) is computed from
``n_i`` raw observations drawn around the true effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, ExperimentRecord

__all__ = [
    "ScenarioConfig",
    "Truth",
    "SCENARIOS",
    "scenario_params",
    "truncated_normal",
    "inverse_gamma",
    "observe_experiment",
    "experiment_observations",
    "generate_dataset",
]

SCENARIOS = {
    "i": (1.0, 1.0, 1.0, 10.0, 2.0),
    "ii": (1.0, 1.0, 1.0, 5.0, 0.5),
    "iii": (0.0, 0.0, 0.0, 10.0, 2.0),
    "iv": (0.0, 0.0, 0.0, 5.0, 0.5),
}

_CHUNK = 4096


@dataclass(frozen=True)
class ScenarioConfig:
    a1: float
    b1: float
    c1: float
    d1: float
    d2: float
    m: int = 80
    J: int = 30
    K: int = 6
    t_range: tuple[int, int] = (1, 24)
    n_range: tuple[int, int] = (100, 10000)
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.J < 1 or self.K < 1:
            raise ValueError("J and K must be >= 1")
        if not (self.d1 > 0 and self.d2 > 0):
            raise ValueError("d1 and d2 must be > 0")
        if self.n_range[0] < 2 or self.n_range[1] < self.n_range[0]:
            raise ValueError("n_range must satisfy 2 <= low <= high")
        if self.t_range[1] < self.t_range[0]:
            raise ValueError("t_range is empty")

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Truth:
    ids: tuple[str, ...]
    theta: np.ndarray
    sigma2: np.ndarray


def scenario_params(scenario: str, **overrides) -> ScenarioConfig:
    """Configuration for scenario ``'i'``-``'iv'`` with the default dimensions."""
    try:
        a1, b1, c1, d1, d2 = SCENARIOS[str(scenario)]
    except KeyError:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of i, ii, iii, iv") from None
    return ScenarioConfig(a1, b1, c1, d1, d2, **overrides)


def truncated_normal(rng, mean, sd, lower=0.0):
    """One draw from N(mean, sd^2) restricted to [lower, inf), by rejection."""
    while True:
        v = rng.normal(mean, sd)
        if v >= lower:
            return v


def inverse_gamma(rng, shape, scale, size=None):
    """Inverse-gamma draws with density proportional to x^(-shape-1) exp(-scale/x)."""
    return scale / rng.gamma(shape, 1.0, size)


def observe_experiment(rng, theta, sigma2, n):
    """Mean and squared standard error of ``n`` draws from N(theta, n * sigma2).

    The draws are consumed in chunks and never held all at once; chunk
    statistics are merged with Chan's parallel update.
    """
    sd = math.sqrt(n * sigma2)
    count = 0
    mean = 0.0
    m2 = 0.0
    while count < n:
        k = min(_CHUNK, n - count)
        block = rng.normal(theta, sd, k)
        bmean = float(block.mean())
        bm2 = float(((block - bmean) ** 2).sum())
        total = count + k
        delta = bmean - mean
        mean += delta * k / total
        m2 += bm2 + delta * delta * count * k / total
        count = total
    return mean, m2 / (n * (n - 1))


def _obs_rng(seed, i):
    return np.random.default_rng(np.random.SeedSequence([seed, 1, i]))


def experiment_observations(cfg: ScenarioConfig, i: int, theta: float, sigma2: float, n: int):
    """Regenerate the raw observations behind experiment ``i`` of ``cfg``'s dataset."""
    rng = _obs_rng(cfg.seed, i)
    sd = math.sqrt(n * sigma2)
    return np.concatenate([rng.normal(theta, sd, min(_CHUNK, n - s)) for s in range(0, n, _CHUNK)])


def generate_dataset(cfg: ScenarioConfig) -> tuple[Dataset, Truth]:
    """Simulate one dataset; returns it with the true per-experiment effects and variances."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    mu_theta = rng.normal(3.0, 2.0)
    var_theta = truncated_normal(rng, 0.0, cfg.d1)
    theta_a = rng.normal(mu_theta, math.sqrt(var_theta), cfg.J)
    theta_b = rng.normal(mu_theta, math.sqrt(var_theta), cfg.K)
    mu_sigma = rng.normal(1.0, 0.1)
    var_sigma = truncated_normal(rng, 0.0, cfg.d2)
    delta_a = rng.normal(mu_sigma, math.sqrt(var_sigma), cfg.J)
    delta_b = rng.normal(mu_sigma, math.sqrt(var_sigma), cfg.K)

    m = cfg.m
    x = rng.uniform(1.0, 10.0, m)
    t = rng.integers(cfg.t_range[0], cfg.t_range[1] + 1, m)
    n = rng.integers(cfg.n_range[0], cfg.n_range[1] + 1, m)
    ga = rng.integers(0, cfg.J, m)
    gb = rng.integers(0, cfg.K, m)

    phase = 2.0 * np.pi * t / 12.0
    theta = (theta_a[ga] + theta_b[gb] + cfg.a1 * np.sin(phase) + cfg.b1 * np.cos(phase)
             + cfg.c1 * t / 12.0 + 0.5 * x)
    sigma2 = inverse_gamma(rng, 2.0, np.exp(delta_a[ga] + delta_b[gb] + 0.1 * x))

    width_a = len(str(cfg.J))
    width_b = len(str(cfg.K))
    width_i = len(str(m))
    records = []
    for i in range(m):
        y, s2 = observe_experiment(_obs_rng(cfg.seed, i), theta[i], sigma2[i], int(n[i]))
        records.append(ExperimentRecord(
            id=f"e{i + 1:0{width_i}d}",
            y=y,
            s2=s2,
            n=int(n[i]),
            t=float(t[i]),
            group_a=f"a{ga[i] + 1:0{width_a}d}",
            group_b=f"b{gb[i] + 1:0{width_b}d}",
            x=(float(x[i]),),
        ))
    levels_a = tuple(f"a{j + 1:0{width_a}d}" for j in range(cfg.J))
    levels_b = tuple(f"b{k + 1:0{width_b}d}" for k in range(cfg.K))
    times = tuple(sorted({float(v) for v in t}))
    data = Dataset(tuple(records), levels_a=levels_a, levels_b=levels_b, times=times)
    truth = Truth(ids=tuple(r.id for r in records), theta=theta, sigma2=sigma2)
    return data, truth
