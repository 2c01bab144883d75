"""Periodic covariance kernel and exact Gaussian-process conditioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

__all__ = [
    "KernelParams",
    "GaussianConditional",
    "FactorizationError",
    "DEFAULT_JITTER",
    "MAX_JITTER",
    "kernel_eval",
    "kernel_matrix",
    "build_cov",
    "jittered_cholesky",
    "gp_condition",
]

# relative to sigma_p2
DEFAULT_JITTER = 1e-8
MAX_JITTER = 1e-4

# extended precision where the platform has it (x87 80-bit on x86-64 Linux)
_LD = np.longdouble
_PI_LD = _LD("3.14159265358979323846264338327950288")
_REFINE_STEPS = 3


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, message, jitter):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class KernelParams:
    sigma_p2: float
    l_p: float
    p_e: float = 12.0

    def __post_init__(self):
        for name in ("sigma_p2", "l_p", "p_e"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")


@dataclass(frozen=True)
class GaussianConditional:
    mean: np.ndarray
    cov: np.ndarray


def kernel_eval(t, t2, kp: KernelParams):
    """sigma_p2 * exp(-2 sin^2(pi |t - t2| / p_e) / l_p^2); broadcasts."""
    s = np.sin(np.pi * np.abs(np.subtract(t, t2)) / kp.p_e)
    return kp.sigma_p2 * np.exp(-2.0 * s * s / (kp.l_p * kp.l_p))


def kernel_matrix(times_a, times_b, kp: KernelParams) -> np.ndarray:
    a = np.asarray(times_a, dtype=float)
    b = np.asarray(times_b, dtype=float)
    return kernel_eval(a[:, None], b[None, :], kp)


def jittered_cholesky(K: np.ndarray, scale: float, jitter: float = DEFAULT_JITTER):
    """Lower Cholesky factor of ``K + j * scale * I``.

    ``j`` starts at ``jitter`` and grows by 10x up to ``MAX_JITTER`` until the
    factorization succeeds. Returns ``(L, j)``.
    """
    n = K.shape[0]
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(K + (j * scale) * np.eye(n)), j
        except np.linalg.LinAlgError:
            if j >= MAX_JITTER:
                raise FactorizationError(
                    f"covariance not positive definite with jitter {j:g} x sigma_p2", j
                ) from None
            j = max(j * 10.0, DEFAULT_JITTER)


def build_cov(times, kp: KernelParams, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """Kernel matrix over ``times`` with ``jitter * sigma_p2`` on the diagonal.

    Verifies the result factorizes, escalating the jitter if needed; the
    returned matrix carries whatever jitter was finally used. With
    ``jitter=0`` the raw kernel matrix is returned unchecked.
    """
    K = kernel_matrix(times, times, kp)
    if jitter == 0:
        return K
    _, used = jittered_cholesky(K, kp.sigma_p2, jitter)
    return K + used * kp.sigma_p2 * np.eye(K.shape[0])


def _kernel_ld(a, b, kp: KernelParams) -> np.ndarray:
    a = np.asarray(a, dtype=_LD)
    b = np.asarray(b, dtype=_LD)
    s = np.sin(_PI_LD * np.abs(a[:, None] - b[None, :]) / _LD(kp.p_e))
    lp = _LD(kp.l_p)
    return _LD(kp.sigma_p2) * np.exp(-2 * s * s / (lp * lp))


def _refined_solve(A, chol, B):
    """Solve ``A x = B`` (both extended precision) by iterative refinement on a float64 factor."""
    x = linalg.cho_solve((chol, True), B.astype(float)).astype(_LD)
    for _ in range(_REFINE_STEPS):
        r = B - A @ x
        x = x + linalg.cho_solve((chol, True), r.astype(float)).astype(_LD)
    return x


def gp_condition(train_times, train_values, test_times, kp: KernelParams,
                 jitter: float = DEFAULT_JITTER) -> GaussianConditional:
    """Distribution of the zero-mean GP at ``test_times`` given exact values
    at ``train_times``.

    mean = K_*^T K^{-1} f,  cov = K_** - K_*^T K^{-1} K_*, with K jittered.
    Periodic kernels are often nearly singular (times a period apart, long
    length scales), so the kernel is evaluated in extended precision and the
    float64 Cholesky solves are refined against it.
    """
    train_times = np.asarray(train_times, dtype=float)
    train_values = np.asarray(train_values, dtype=float)
    test_times = np.asarray(test_times, dtype=float)
    if train_times.shape != train_values.shape:
        raise ValueError("train_times and train_values differ in length")
    Kss = kernel_matrix(test_times, test_times, kp)
    if train_times.size == 0:
        return GaussianConditional(np.zeros(test_times.size), Kss)
    K = kernel_matrix(train_times, train_times, kp)
    L, used = jittered_cholesky(K, kp.sigma_p2, jitter)
    A = _kernel_ld(train_times, train_times, kp)
    A[np.diag_indices_from(A)] += _LD(used) * _LD(kp.sigma_p2)
    Ks = _kernel_ld(train_times, test_times, kp)
    w = _refined_solve(A, L, train_values.astype(_LD))
    X = _refined_solve(A, L, Ks)
    mean = (Ks.T @ w).astype(float)
    cov = (_kernel_ld(test_times, test_times, kp) - Ks.T @ X).astype(float)
    cov = 0.5 * (cov + cov.T)
    return GaussianConditional(mean, cov)
