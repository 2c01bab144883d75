"""Gelman-Rubin convergence diagnostics over multi-chain draws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ConvergenceReport", "gelman_rubin", "split_gelman_rubin", "convergence_report",
           "batch_means_se", "effective_sample_size", "mcse_mean"]


@dataclass(frozen=True)
class ConvergenceReport:
    r_hat: dict
    median_r_hat: float
    max_r_hat: float
    threshold: float = 1.1

    @property
    def converged(self) -> bool:
        return math.isfinite(self.max_r_hat) and self.max_r_hat <= self.threshold

    def to_dict(self):
        return {
            "r_hat": {k: _json_float(v) for k, v in self.r_hat.items()},
            "median_r_hat": _json_float(self.median_r_hat),
            "max_r_hat": _json_float(self.max_r_hat),
            "threshold": self.threshold,
            "converged": self.converged,
        }


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else ("inf" if v > 0 else "nan")


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of Gelman & Rubin (1992).

    With ``n`` draws per chain, W is the mean within-chain variance and B/n
    the variance of the chain means; R-hat = sqrt(((n - 1)/n W + B/n) / W).
    Returns ``inf`` when every chain is constant but the chains disagree and
    ``1.0`` when all draws are identical.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("gelman_rubin needs >= 2 chains of >= 2 draws each")
    n = x.shape[1]
    means = x.mean(axis=1)
    W = float(np.mean(x.var(axis=1, ddof=1)))
    B_over_n = float(np.var(means, ddof=1))
    if W == 0.0:
        return 1.0 if B_over_n == 0.0 else math.inf
    V = (n - 1) / n * W + B_over_n
    return math.sqrt(V / W)


def split_gelman_rubin(chains) -> float:
    """R-hat after splitting each chain into halves (catches within-chain drift)."""
    x = np.asarray(chains, dtype=float)
    half = x.shape[1] // 2
    return gelman_rubin(np.concatenate([x[:, :half], x[:, half:2 * half]], axis=0))


def convergence_report(chains, names, threshold=1.1, split=False, include=None) -> ConvergenceReport:
    """R-hat for every column of per-chain ``samples x P`` arrays.

    ``include`` optionally restricts the report to names accepted by the
    predicate.
    """
    stat = split_gelman_rubin if split else gelman_rubin
    stacked = np.stack([np.asarray(c, dtype=float) for c in chains])
    r = {}
    for k, name in enumerate(names):
        if include is not None and not include(name):
            continue
        r[name] = stat(stacked[:, :, k])
    values = np.array(list(r.values()), dtype=float)
    if values.size == 0:
        raise ValueError("no parameters selected for the convergence report")
    finite = np.where(np.isnan(values), np.inf, values)
    return ConvergenceReport(r, float(np.median(finite)), float(np.max(finite)), threshold)


def batch_means_se(x, n_batches=None) -> float:
    """Monte Carlo standard error of the mean of a correlated series, by batch means.

    The series is cut into ``n_batches`` contiguous batches (default
    ``floor(sqrt(len(x)))``); the standard error is the spread of batch means
    over ``sqrt(n_batches)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if n_batches is None:
        n_batches = int(math.isqrt(x.size))
    if n_batches < 2 or x.size < 2 * n_batches:
        raise ValueError("need at least two batches of two draws each")
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def effective_sample_size(chains) -> float:
    """Multi-chain effective sample size with Geyer's initial monotone sequence.

    ``chains`` is ``(n_chains, n_draws)``. Autocorrelations are combined
    across chains through the within- and pooled-variance estimates, as in
    Gelman et al., Bayesian Data Analysis (3rd ed.).
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 4:
        raise ValueError("need an (n_chains, n_draws) array with at least 4 draws per chain")
    m, n = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(centered, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n
    within = float(np.mean(acov[:, 0] * n / (n - 1)))
    var_plus = within * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(x.mean(axis=1), ddof=1))
    if not var_plus > 0:
        return float(m * n)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum of adjacent pairs, truncated at the first negative pair and made monotone
    total = 0.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    tau = max(-1.0 + 2.0 * total, 1.0 / math.log10(m * n))
    return float(m * n / tau)


def mcse_mean(chains) -> float:
    """Monte Carlo standard error of the pooled mean: sd / sqrt(ESS)."""
    x = np.asarray(chains, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(effective_sample_size(x)))
