"""Hamiltonian Monte Carlo with dual-averaging step-size adaptation.

Each iteration draws a fresh momentum, integrates ``leapfrog_steps`` leapfrog
steps (jittered uniformly by +-50%) and applies a Metropolis correction.
Warmup adapts the step size by dual averaging (Hoffman & Gelman, 2014) and,
optionally, a diagonal inverse metric from windowed posterior variances.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import Layout, Model, ModelSpec

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "SamplerHealthError",
    "ChainResult",
    "PosteriorDraws",
    "leapfrog",
    "sample_chain",
    "sample",
    "run_chains",
    "chain_rng",
    "max_workers",
]

DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    pass


class SamplerHealthError(SamplerError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 2000
    samples: int = 8000
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    seed: int = 0
    adapt_mass: bool = False
    init_radius: float = 2.0
    max_divergent_fraction: float = 0.25

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must be in (0, 1)")
        if self.warmup != 0 and self.warmup < 100:
            raise ValueError("warmup must be 0 (no adaptation) or >= 100")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, chain]))


def max_workers(requested=None) -> int:
    """Worker cap from ``STREAM_META_THREADS`` (default: CPU count)."""
    cap = os.environ.get("STREAM_META_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    if requested is not None:
        n = min(n, requested)
    return max(1, n)


def _integrate(q, p, lp, g, eps, steps, value_and_grad, inv_metric):
    """Leapfrog from (q, p) with known log density ``lp`` and gradient ``g``.

    Returns ``(q, p, lp, g, ok)``; ``ok`` is False once the log density or
    its gradient stops being finite.
    """
    if steps == 0 or eps == 0:
        return q, p, lp, g, True
    p = p + 0.5 * eps * g
    for step in range(steps):
        q = q + eps * (inv_metric * p)
        lp, g = value_and_grad(q)
        if g is None or not math.isfinite(lp):
            return q, p, -math.inf, None, False
        if step != steps - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    if not np.all(np.isfinite(p)):
        return q, p, -math.inf, None, False
    return q, p, lp, g, True


def leapfrog(q, p, eps, steps, grad, inv_metric=None):
    """Leapfrog integration for H(q, p) = -log pi(q) + p' M^-1 p / 2.

    ``grad`` returns the gradient of log pi. Returns the new ``(q, p)``;
    a non-finite state shows up as non-finite entries in the result.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    inv_metric = np.ones_like(q) if inv_metric is None else np.asarray(inv_metric, dtype=float)
    if steps == 0 or eps == 0:
        return q, p
    with np.errstate(all="ignore"):
        q, p, _, _, _ = _integrate(q, p, 0.0, np.asarray(grad(q), dtype=float), eps, steps,
                                   lambda x: (0.0, np.asarray(grad(x), dtype=float)), inv_metric)
    return q, p


class _DualAveraging:
    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.count = 0
        self.log_eps = math.log(eps0)

    def update(self, accept_prob):
        self.count += 1
        k = self.count
        w = 1.0 / (k + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(k) / self.gamma * self.h_bar
        eta = k ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def _initial_step_size(q, lp, g, value_and_grad, inv_metric, rng):
    """Double or halve a unit step until one-step acceptance crosses 1/2."""
    eps = 1.0
    p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    h0 = lp - 0.5 * float(p @ (inv_metric * p))

    def log_ratio(eps):
        with np.errstate(all="ignore"):
            _, p1, lp1, _, ok = _integrate(q, p, lp, g, eps, 1, value_and_grad, inv_metric)
            if not ok:
                return -math.inf
            r = lp1 - 0.5 * float(p1 @ (inv_metric * p1)) - h0
        return r if math.isfinite(r) else -math.inf

    r = log_ratio(eps)
    direction = 1 if r > math.log(0.5) else -1
    for _ in range(100):
        if direction == 1 and not r > math.log(0.5):
            break
        if direction == -1 and not r < math.log(0.5):
            break
        eps = eps * 2.0 if direction == 1 else eps / 2.0
        if eps > 1e7 or eps < 1e-10:
            break
        r = log_ratio(eps)
    return eps


def _windows(warmup):
    """Metric-adaptation windows [(start, end), ...] following Stan's schedule."""
    init, term, base = 75, 50, 25
    if init + term + base > warmup:
        init, term = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init - term
    out = []
    start, size = init, base
    end_slow = warmup - term
    while start < end_slow:
        end = start + size
        if end + 2 * size > end_slow:
            end = end_slow
        out.append((start, end))
        start, size = end, size * 2
    return out


@dataclass
class ChainResult:
    draws: np.ndarray  # samples x dim, unconstrained
    accept_rate: float
    step_size: float
    divergences: int
    warmup_divergences: int
    inv_metric: np.ndarray


def sample_chain(value_and_grad, dim, cfg: SamplerConfig, chain: int = 0, init=None):
    """Run one chain on an arbitrary differentiable log density.

    ``value_and_grad(q)`` returns ``(log_pi, grad)`` with ``log_pi = -inf``
    (and any ``grad``) for states outside the support.
    """
    rng = chain_rng(cfg.seed, chain)
    if init is None:
        for _ in range(100):
            q = rng.uniform(-cfg.init_radius, cfg.init_radius, dim)
            lp, g = value_and_grad(q)
            if g is not None and math.isfinite(lp) and np.all(np.isfinite(g)):
                break
        else:
            raise SamplerError(f"chain {chain}: no finite initial point after 100 tries")
    else:
        q = np.array(init, dtype=float)
        lp, g = value_and_grad(q)
        if g is None or not math.isfinite(lp):
            raise SamplerError(f"chain {chain}: log density not finite at the given init")

    inv_metric = np.ones(dim)
    eps = _initial_step_size(q, lp, g, value_and_grad, inv_metric, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    windows = _windows(cfg.warmup) if cfg.adapt_mass and cfg.warmup else []
    window_ends = {end: start for start, end in windows}
    buffer = []
    lo = max(1, round(cfg.leapfrog_steps * 0.5))
    hi = max(lo, round(cfg.leapfrog_steps * 1.5))

    draws = np.empty((cfg.samples, dim))
    accept_sum = 0.0
    divergences = 0
    warm_div = 0
    total = cfg.warmup + cfg.samples
    for it in range(total):
        warm = it < cfg.warmup
        steps = int(rng.integers(lo, hi + 1))
        p = rng.standard_normal(dim) / np.sqrt(inv_metric)
        h0 = -lp + 0.5 * float(p @ (inv_metric * p))
        with np.errstate(all="ignore"):
            q1, p1, lp1, g1, ok = _integrate(q, p, lp, g, eps, steps, value_and_grad, inv_metric)
        if ok:
            h1 = -lp1 + 0.5 * float(p1 @ (inv_metric * p1))
            delta = h1 - h0
            ok = math.isfinite(delta) and delta < DIVERGENCE_THRESHOLD
        if ok:
            accept = 1.0 if delta <= 0 else math.exp(-delta)
        else:
            accept = 0.0
            if warm:
                warm_div += 1
            else:
                divergences += 1
        if ok and rng.uniform() < accept:
            q, lp, g = q1, lp1, g1

        if warm:
            eps = da.update(accept)
            if windows:
                if any(s <= it < e for s, e in windows):
                    buffer.append(q)
                if it + 1 in window_ends:
                    w = np.array(buffer)
                    n = w.shape[0]
                    var = w.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                    inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    buffer = []
                    eps = _initial_step_size(q, lp, g, value_and_grad, inv_metric, rng)
                    da = _DualAveraging(eps, cfg.target_accept)
            if it == cfg.warmup - 1:
                eps = da.final
        else:
            draws[it - cfg.warmup] = q
            accept_sum += accept

    return ChainResult(
        draws=draws,
        accept_rate=accept_sum / cfg.samples,
        step_size=eps,
        divergences=divergences,
        warmup_divergences=warm_div,
        inv_metric=inv_metric,
    )


def sample(value_and_grad, dim, cfg: SamplerConfig):
    """All chains of ``cfg`` on a generic target; returns ``ChainResult`` per chain."""
    return [sample_chain(value_and_grad, dim, cfg, c) for c in range(cfg.chains)]


@dataclass
class PosteriorDraws:
    """Constrained-space draws, one ``samples x P`` array per chain."""

    chains: list
    layout: Layout
    accept_rate: np.ndarray
    step_size: np.ndarray
    divergences: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = {c.shape[0] for c in self.chains}
        if len(rows) != 1:
            raise ValueError("chains differ in length")
        for c in self.chains:
            if c.shape[1] != self.layout.size:
                raise ValueError("draw width does not match layout")
            if not np.all(np.isfinite(c)):
                raise ValueError("draws contain non-finite values")

    @property
    def n_chains(self):
        return len(self.chains)

    @property
    def n_samples(self):
        return self.chains[0].shape[0]

    @property
    def names(self):
        return self.layout.flat_names()

    def pooled(self) -> np.ndarray:
        """All draws stacked chain after chain."""
        return np.concatenate(self.chains, axis=0)

    def block(self, name) -> np.ndarray:
        """Pooled draws of one block, shape (total draws, block size)."""
        return self.pooled()[:, self.layout[name].slice]

    def __contains__(self, name):
        return name in self.layout


def _chain_job(args):
    spec, data, cfg, chain = args
    model = Model(spec, data)
    res = sample_chain(model.log_density_and_grad, model.dim, cfg, chain)
    res.draws = np.array([model.constrain_flat(row) for row in res.draws])
    return res


def run_chains(spec: ModelSpec, d: Dataset, cfg: SamplerConfig, n_jobs=None) -> PosteriorDraws:
    """Fit ``spec`` to ``d``: ``cfg.chains`` seeded HMC chains, draws kept in model space."""
    model = Model(spec, d)
    jobs = [(spec, d, cfg, c) for c in range(cfg.chains)]
    workers = max_workers(cfg.chains if n_jobs is None else n_jobs)
    if workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    for c, res in enumerate(results):
        if res.divergences > cfg.max_divergent_fraction * cfg.samples:
            raise SamplerHealthError(
                f"{spec.kind}: chain {c} diverged on {res.divergences} of {cfg.samples} "
                "post-warmup iterations")
    meta = {
        "kind": spec.kind,
        "period": spec.period,
        "jitter": spec.jitter,
        "fixed_effect_sd": spec.priors.fixed_effect_sd,
        "levels_a": list(model.levels_a),
        "levels_b": list(model.levels_b),
        "time_grid": [float(v) for v in model.time_grid],
        "mean_s2": float(np.mean(d.s2)),
        "q": d.q,
        "seed": cfg.seed,
        "warmup": cfg.warmup,
        "samples": cfg.samples,
        "warmup_divergences": [int(r.warmup_divergences) for r in results],
    }
    return PosteriorDraws(
        chains=[r.draws for r in results],
        layout=model.layout,
        accept_rate=np.array([r.accept_rate for r in results]),
        step_size=np.array([r.step_size for r in results]),
        divergences=np.array([r.divergences for r in results]),
        meta=meta,
    )
