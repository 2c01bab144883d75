"""Forecast scores: MAPE, scaled MSE, interval score and HPD intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "ScoreReport",
    "mape",
    "scaled_mse",
    "hpd_interval",
    "interval_score",
    "posterior_median",
    "score",
]


@dataclass(frozen=True)
class ScoreReport:
    mape: float
    scaled_mse: float
    interval_score: float
    alpha: float
    n_eval: int

    def __post_init__(self):
        if self.n_eval < 1:
            raise ValueError("n_eval must be >= 1")

    def to_dict(self):
        return asdict(self)


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape or truth.ndim != 1 or truth.size == 0:
        raise ValueError("truth and pred must be non-empty vectors of equal length")
    if np.any(truth == 0):
        raise ValueError("relative errors are undefined where truth == 0")
    return truth, pred


def mape(truth, pred) -> float:
    """Mean absolute percentage error, in percent."""
    truth, pred = _pair(truth, pred)
    return float(100.0 * np.mean(np.abs((truth - pred) / truth)))


def scaled_mse(truth, pred) -> float:
    """Mean of squared errors divided by squared truth."""
    truth, pred = _pair(truth, pred)
    return float(np.mean((truth - pred) ** 2 / truth ** 2))


def hpd_interval(draws, alpha=0.05) -> tuple[float, float]:
    """Shortest interval spanning ``ceil((1 - alpha) n)`` sorted draws.

    Ties go to the window that starts lowest; endpoints are sample values.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n < 20:
        raise ValueError(f"hpd_interval needs at least 20 draws, got {n}")
    k = math.ceil(round((1.0 - alpha) * n, 9))
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def interval_score(truth, lower, upper, alpha=0.05) -> float:
    """Average interval score: width plus (2/alpha) times any miss distance."""
    truth = np.asarray(truth, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (truth.shape == lower.shape == upper.shape) or truth.size == 0:
        raise ValueError("truth, lower and upper must be non-empty and the same shape")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    below = np.where(truth < lower, lower - truth, 0.0)
    above = np.where(truth > upper, truth - upper, 0.0)
    return float(np.mean((upper - lower) + (2.0 / alpha) * (below + above)))


def posterior_median(draws, axis=0):
    return np.median(np.asarray(draws, dtype=float), axis=axis)


def score(truth, point, lower, upper, alpha=0.05) -> ScoreReport:
    truth = np.asarray(truth, dtype=float)
    return ScoreReport(
        mape=mape(truth, point),
        scaled_mse=scaled_mse(truth, point),
        interval_score=interval_score(truth, lower, upper, alpha),
        alpha=alpha,
        n_eval=int(truth.size),
    )
