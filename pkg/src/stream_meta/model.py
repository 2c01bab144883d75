"""Joint log-posterior and gradient for STREAM and the seven baselines.

Every model shares the mean structure

    theta_i = alpha_theta + theta_a[a_i] + theta_b[b_i] + theta_c[c_i] + x_i @ beta_theta
    y_i ~ N(theta_i, sigma2_i)

and differs in how the group effects, the time effect ``theta_c`` and the
sampling variances ``sigma2_i`` are treated:

========  ============  ==============  ==================================
kind      group effects  time effect     sigma2_i
========  ============  ==============  ==================================
FE        fixed          none            S2_i (known)
FE-M      fixed          month dummies   S2_i
FE-MV     fixed          month dummies   latent, log-normal with fixed delta
RE        random         none            S2_i
RE-M      random         month dummies   S2_i
RE-MV     random         month dummies   latent, log-normal with random delta
RE-GP     random         periodic GP     S2_i
STREAM    random         periodic GP     latent, log-normal with random delta
========  ============  ==============  ==================================

"Fixed" effects get independent N(0, fixed_effect_sd**2) priors. Random
effects are sampled non-centered (``effect = sqrt(tau2) * z``); the GP time
effect likewise as ``theta_c = chol(C) @ z``. Positive scalars live in log
space with the log-Jacobian included, and the half-Cauchy priors apply to the
variance parameters themselves (tau2, sigma_p2, l_p). When sigma2_i is latent,
S2_i ~ Gamma((n_i - 1)/2, rate=(n_i - 1)/(2 sigma2_i)) and
log sigma2_i ~ N(alpha_sigma + delta_a[a_i] + delta_b[b_i] + x_i @ beta_sigma
- log n_i, tau_sigma2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import lapack
from scipy.special import gammaln

from . import _density
from .data import Dataset
from .kernel import DEFAULT_JITTER, MAX_JITTER, FactorizationError

__all__ = [
    "KINDS",
    "ContractError",
    "NonFiniteGradientError",
    "PriorConfig",
    "ModelSpec",
    "Block",
    "Layout",
    "ParamVector",
    "Model",
    "month_index",
    "constrain",
    "unconstrain",
    "log_posterior",
    "grad_log_posterior",
]

KINDS = ("FE", "FE-M", "FE-MV", "RE", "RE-M", "RE-MV", "RE-GP", "STREAM")

_LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Inputs that do not fit together (layouts, specs, draws)."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, block):
        super().__init__(f"non-finite gradient in block {block!r}")
        self.block = block


@dataclass(frozen=True)
class PriorConfig:
    m_alpha_theta: float = 0.0
    m_alpha_sigma: float = 0.0
    s_alpha_theta: float = 1000.0
    s_alpha_sigma: float = 1000.0
    # scalars broadcast to length q
    m_beta_theta: float | tuple = 0.0
    m_beta_sigma: float | tuple = 0.0
    s_beta_theta: float | tuple = 1000.0
    s_beta_sigma: float | tuple = 1000.0
    eta_a: float = 2.5
    eta_b: float = 2.5
    eta_c: float = 2.5
    eta_d: float = 2.5
    eta_e: float = 2.5
    eta_l: float = 2.5
    eta_sigma: float = 2.5
    fixed_effect_sd: float = math.sqrt(1000.0)

    def __post_init__(self):
        scales = ["s_alpha_theta", "s_alpha_sigma", "eta_a", "eta_b", "eta_c", "eta_d",
                  "eta_e", "eta_l", "eta_sigma", "fixed_effect_sd"]
        for name in scales:
            if not getattr(self, name) > 0:
                raise ContractError(f"prior scale {name} must be > 0")
        for name in ("s_beta_theta", "s_beta_sigma"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ContractError(f"prior scale {name} must be > 0")

    def vector(self, name, q):
        v = np.asarray(getattr(self, name), dtype=float)
        if v.ndim == 0:
            return np.full(q, float(v))
        if v.shape != (q,):
            raise ContractError(f"{name} has length {v.size}, expected {q}")
        return v.copy()


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    priors: PriorConfig = field(default_factory=PriorConfig)
    period: float = 12.0
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"model kind must be one of {', '.join(KINDS)}; got {self.kind!r}")
        if not self.period > 0:
            raise ContractError("period must be > 0")

    @property
    def random_effects(self) -> bool:
        return self.kind.startswith("RE") or self.kind == "STREAM"

    @property
    def variance_model(self) -> bool:
        return self.kind in ("FE-MV", "RE-MV", "STREAM")

    @property
    def time_effect(self) -> str | None:
        if self.kind in ("RE-GP", "STREAM"):
            return "gp"
        if self.kind in ("FE-M", "FE-MV", "RE-M", "RE-MV"):
            return "month"
        return None


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    size: int
    positive: bool = False

    @property
    def slice(self):
        return slice(self.start, self.start + self.size)


class Layout:
    """Ordered, named blocks of a flat parameter vector."""

    def __init__(self, blocks):
        self.blocks = tuple(blocks)
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ContractError("duplicate block names in layout")
        self._by_name = {b.name: b for b in self.blocks}
        self.size = sum(b.size for b in self.blocks)

    @classmethod
    def from_sizes(cls, sizes, positive=()):
        blocks, start = [], 0
        for name, size in sizes:
            blocks.append(Block(name, start, size, name in positive))
            start += size
        return cls(blocks)

    def __contains__(self, name):
        return name in self._by_name

    def __getitem__(self, name) -> Block:
        return self._by_name[name]

    def __eq__(self, other):
        return isinstance(other, Layout) and self.blocks == other.blocks

    def __repr__(self):
        inner = ", ".join(f"{b.name}[{b.size}]" for b in self.blocks)
        return f"Layout({inner})"

    def unpack(self, values) -> dict[str, np.ndarray]:
        values = np.asarray(values)
        if values.shape[-1] != self.size:
            raise ContractError(f"vector length {values.shape[-1]} != layout size {self.size}")
        return {b.name: values[..., b.slice] for b in self.blocks}

    def pack(self, parts: Mapping[str, np.ndarray]) -> np.ndarray:
        out = np.empty(self.size)
        for b in self.blocks:
            if b.name not in parts:
                raise ContractError(f"missing block {b.name!r}")
            v = np.atleast_1d(np.asarray(parts[b.name], dtype=float))
            if v.size != b.size:
                raise ContractError(f"block {b.name!r} has {v.size} values, expected {b.size}")
            out[b.slice] = v
        return out

    def flat_names(self) -> list[str]:
        out = []
        for b in self.blocks:
            if b.size == 1 and b.name not in _VECTOR_BLOCKS:
                out.append(b.name)
            else:
                out.extend(f"{b.name}.{k + 1}" for k in range(b.size))
        return out

    def to_json(self):
        return [[b.name, b.size, b.positive] for b in self.blocks]

    @classmethod
    def from_json(cls, data):
        return cls.from_sizes([(n, s) for n, s, _ in data],
                              positive={n for n, _, p in data if p})


_VECTOR_BLOCKS = {"theta_a", "theta_b", "theta_c", "beta_theta", "delta_a", "delta_b",
                  "beta_sigma", "sigma2"}


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.layout.size,):
            raise ContractError(f"vector length {v.size} != layout size {self.layout.size}")
        object.__setattr__(self, "values", v)

    def unpack(self):
        return self.layout.unpack(self.values)

    @classmethod
    def pack(cls, parts, layout):
        return cls(layout.pack(parts), layout)


def month_index(t, period=12):
    """Cycle position of a time stamp: ((round(t) - 1) mod period) + 1."""
    return (np.rint(np.asarray(t, dtype=float)).astype(int) - 1) % int(period) + 1


def _potrf(A):
    c, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    return c, info


class Model:
    """A model kind bound to a dataset, evaluating the unconstrained log density.

    The time grid is the sorted set of distinct times (GP models) or month
    indices (monthly-dummy models) that occur in ``data``'s records. Group
    effects use the full level maps of ``data``.
    """

    def __init__(self, spec: ModelSpec, data: Dataset):
        self.spec = spec
        self.data = data
        pr = spec.priors
        self.m, self.q = data.m, data.q
        self.J, self.K = data.J, data.K
        self.y = data.y
        self.s2 = data.s2
        self.n = data.n
        self.X = data.X
        self.t = data.t
        idx_a = {v: k for k, v in enumerate(data.levels_a)}
        idx_b = {v: k for k, v in enumerate(data.levels_b)}
        self.ia = np.array([idx_a[r.group_a] for r in data.records], dtype=np.intp)
        self.ib = np.array([idx_b[r.group_b] for r in data.records], dtype=np.intp)
        self.levels_a = tuple(data.levels_a)
        self.levels_b = tuple(data.levels_b)

        te = spec.time_effect
        if te == "gp":
            self.time_grid = np.unique(self.t)
            self.ic = np.searchsorted(self.time_grid, self.t)
        elif te == "month":
            months = month_index(self.t, spec.period)
            self.time_grid = np.unique(months).astype(float)
            self.ic = np.searchsorted(self.time_grid, months)
        else:
            self.time_grid = np.zeros(0)
            self.ic = np.zeros(self.m, dtype=np.intp)
        self.L = self.time_grid.size
        if te == "gp":
            s = np.sin(np.pi * np.abs(self.time_grid[:, None] - self.time_grid[None, :]) / spec.period)
            self._sin2 = s * s
            self._eye = np.eye(self.L)

        self.m_beta_theta = pr.vector("m_beta_theta", self.q)
        self.s_beta_theta = pr.vector("s_beta_theta", self.q)
        self.m_beta_sigma = pr.vector("m_beta_sigma", self.q)
        self.s_beta_sigma = pr.vector("s_beta_sigma", self.q)
        self.fe_var = pr.fixed_effect_sd ** 2

        if spec.variance_model:
            self.shape = 0.5 * (self.n - 1.0)
            self.log_n = np.log(self.n)
            self._gamma_const = float(np.sum(
                self.shape * np.log(self.shape) - gammaln(self.shape)
                + (self.shape - 1.0) * np.log(self.s2)))
        else:
            self._fixed_inv = 1.0 / self.s2
            self._fixed_logvar = float(np.sum(np.log(self.s2)))

        re = spec.random_effects
        sizes = [("alpha_theta", 1), ("theta_a", self.J), ("theta_b", self.K)]
        if te:
            sizes.append(("theta_c", self.L))
        sizes.append(("beta_theta", self.q))
        if re:
            sizes += [("tau_a2", 1), ("tau_b2", 1)]
        if te == "gp":
            sizes += [("sigma_p2", 1), ("l_p", 1)]
        if spec.variance_model:
            sizes += [("alpha_sigma", 1), ("delta_a", self.J), ("delta_b", self.K),
                      ("beta_sigma", self.q)]
            if re:
                sizes += [("tau_c2", 1), ("tau_d2", 1)]
            sizes += [("tau_sigma2", 1), ("sigma2", self.m)]
        positive = {"tau_a2", "tau_b2", "tau_c2", "tau_d2", "tau_sigma2", "sigma_p2", "l_p",
                    "sigma2"}
        self.layout = Layout.from_sizes(sizes, positive=positive)
        self.dim = self.layout.size
        self._s = {b.name: b.slice for b in self.layout.blocks}
        self._i = {b.name: b.start for b in self.layout.blocks}

        idx = np.array([self._i.get(name, -1) for name in _density.BLOCK_ORDER], dtype=np.int64)
        prior_array = np.array([
            pr.m_alpha_theta, pr.s_alpha_theta, pr.m_alpha_sigma, pr.s_alpha_sigma,
            pr.eta_a, pr.eta_b, pr.eta_c, pr.eta_d, pr.eta_e, pr.eta_l, pr.eta_sigma,
            self.fe_var, spec.jitter, MAX_JITTER])
        vm = spec.variance_model
        self._kernel_args = (
            idx,
            np.array([self.m, self.q, self.J, self.K, self.L], dtype=np.int64),
            prior_array,
            self.m_beta_theta, self.s_beta_theta, self.m_beta_sigma, self.s_beta_sigma,
            self.y, self.s2, np.ascontiguousarray(self.X),
            self.ia.astype(np.int64), self.ib.astype(np.int64), np.asarray(self.ic, dtype=np.int64),
            self.shape if vm else np.zeros(self.m),
            self.log_n if vm else np.zeros(self.m),
            self._gamma_const if vm else 0.0,
            np.zeros(self.m) if vm else self._fixed_inv,
            0.0 if vm else self._fixed_logvar,
            {None: 0, "month": 1, "gp": 2}[te],
            self._sin2 if te == "gp" else np.zeros((0, 0)),
        )

    # -- GP helpers ---------------------------------------------------------

    def _gp_factor(self, log_l):
        """Correlation matrix, its jittered Cholesky factor and the jitter."""
        l2 = math.exp(2.0 * log_l)
        R = np.exp(-2.0 * self._sin2 / l2)
        j = self.spec.jitter
        while True:
            c, info = _potrf(R + j * self._eye)
            if info == 0:
                return R, c, j
            if j >= MAX_JITTER:
                raise FactorizationError(f"GP covariance not factorizable at jitter {j:g}", j)
            j *= 10.0

    # -- public API ---------------------------------------------------------

    def log_density(self, u) -> float:
        lp, _ = self._evaluate(np.asarray(u, dtype=float), False)
        return lp

    def log_density_and_grad(self, u):
        """``(lp, grad)``; ``lp`` is ``-inf`` (and ``grad`` None) for invalid states."""
        return self._evaluate(np.asarray(u, dtype=float), True)

    def _evaluate(self, u, want_grad):
        if u.shape != (self.dim,):
            raise ContractError(f"parameter vector has length {u.size}, expected {self.dim}")
        g = np.empty(self.dim)
        lp = self._eval(u, g, want_grad)
        if not math.isfinite(lp):
            return -math.inf, None
        return lp, (g if want_grad else None)

    def _eval(self, u, g, want_grad):
        return _density.log_density(u, g, want_grad, *self._kernel_args)

    def grad(self, u) -> np.ndarray:
        """Gradient of the log density; raises on non-finite entries."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ContractError(f"parameter vector has length {u.size}, expected {self.dim}")
        g = np.full(self.dim, np.nan)
        self._eval(u, g, True)
        if self.spec.time_effect == "gp" and self.L:
            try:
                self._gp_factor(u[self._i["l_p"]])
            except FactorizationError:
                raise NonFiniteGradientError("l_p") from None
        bad = ~np.isfinite(g)
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            for b in self.layout.blocks:
                if b.start <= first < b.start + b.size:
                    raise NonFiniteGradientError(b.name)
        return g

    # -- transforms ---------------------------------------------------------

    def constrain(self, u) -> dict[str, np.ndarray]:
        """Named model-scale values for an unconstrained vector (or rows of them)."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 2:
            return self.layout.unpack(np.array([self.constrain_flat(row) for row in u]))
        return self.layout.unpack(self.constrain_flat(u))

    def constrain_flat(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ContractError(f"parameter vector has length {u.size}, expected {self.dim}")
        spec, s, i = self.spec, self._s, self._i
        out = u.copy()
        for b in self.layout.blocks:
            if b.positive:
                out[b.slice] = np.exp(u[b.slice])
        if spec.random_effects:
            for name, tau in (("theta_a", "tau_a2"), ("theta_b", "tau_b2"),
                              ("delta_a", "tau_c2"), ("delta_b", "tau_d2")):
                if name in self.layout:
                    out[s[name]] = math.exp(0.5 * u[i[tau]]) * u[s[name]]
        if spec.time_effect == "gp" and self.L:
            _, chol, _ = self._gp_factor(u[i["l_p"]])
            out[s["theta_c"]] = math.exp(0.5 * u[i["sigma_p2"]]) * (chol @ u[s["theta_c"]])
        return out

    def unconstrain(self, values) -> np.ndarray:
        """Inverse of :meth:`constrain_flat`; accepts a flat vector or a block dict."""
        if isinstance(values, Mapping):
            values = self.layout.pack(values)
        c = np.asarray(values, dtype=float)
        if c.shape != (self.dim,):
            raise ContractError(f"parameter vector has length {c.size}, expected {self.dim}")
        spec, s, i = self.spec, self._s, self._i
        u = c.copy()
        for b in self.layout.blocks:
            if b.positive:
                if np.any(c[b.slice] <= 0):
                    raise ContractError(f"block {b.name!r} must be positive")
                u[b.slice] = np.log(c[b.slice])
        if spec.random_effects:
            for name, tau in (("theta_a", "tau_a2"), ("theta_b", "tau_b2"),
                              ("delta_a", "tau_c2"), ("delta_b", "tau_d2")):
                if name in self.layout:
                    u[s[name]] = c[s[name]] / math.sqrt(c[i[tau]])
        if spec.time_effect == "gp" and self.L:
            _, chol, _ = self._gp_factor(u[i["l_p"]])
            sol, _ = lapack.dtrtrs(chol, c[s["theta_c"]] / math.sqrt(c[i["sigma_p2"]]), lower=1)
            u[s["theta_c"]] = sol
        return u

    def param_vector(self, u) -> ParamVector:
        return ParamVector(np.asarray(u, dtype=float), self.layout)


def _model_for(pv: ParamVector, d: Dataset, spec: ModelSpec) -> Model:
    model = Model(spec, d)
    if pv.layout != model.layout:
        raise ContractError(f"layout {pv.layout!r} does not match {spec.kind} on this dataset "
                            f"({model.layout!r})")
    return model


def constrain(pv: ParamVector, d: Dataset, spec: ModelSpec) -> dict[str, np.ndarray]:
    return _model_for(pv, d, spec).constrain(pv.values)


def unconstrain(values: Mapping[str, np.ndarray], d: Dataset, spec: ModelSpec) -> ParamVector:
    model = Model(spec, d)
    return ParamVector(model.unconstrain(values), model.layout)


def log_posterior(pv: ParamVector, d: Dataset, spec: ModelSpec) -> float:
    """Joint log density in unconstrained space; ``-inf`` for invalid states."""
    return _model_for(pv, d, spec).log_density(pv.values)


def grad_log_posterior(pv: ParamVector, d: Dataset, spec: ModelSpec) -> np.ndarray:
    return _model_for(pv, d, spec).grad(pv.values)
