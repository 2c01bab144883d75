"""Hierarchical Bayesian meta-analysis with shrinkage of effects and variances.

The package fits STREAM and seven baseline models to experiment summaries
``(y_i, S_i^2, n_i)`` with its own Hamiltonian Monte Carlo sampler, draws
posterior predictions for future experiments and scores them.
"""

from .data import (
    DataError,
    Dataset,
    ExperimentRecord,
    build_design,
    delta_log_transform,
    load_dataset,
    log_transform_dataset,
    split_by_time,
    write_dataset,
)
from .diagnostics import (
    ConvergenceReport,
    convergence_report,
    effective_sample_size,
    gelman_rubin,
    mcse_mean,
    split_gelman_rubin,
)
from .evaluation import ScoreReport, hpd_interval, interval_score, mape, scaled_mse, score
from .kernel import KernelParams, build_cov, gp_condition, kernel_eval
from .model import (
    KINDS,
    ContractError,
    Model,
    ModelSpec,
    ParamVector,
    PriorConfig,
    constrain,
    grad_log_posterior,
    log_posterior,
    unconstrain,
)
from .prediction import PredictionTask, predict, predict_sigma2, predict_theta, predict_y, summarize
from .sampler import PosteriorDraws, SamplerConfig, leapfrog, run_chains
from .simulate import ScenarioConfig, generate_dataset, scenario_params
from .store import read_draws, write_draws

__version__ = "0.1.0"

__all__ = [
    "DataError", "Dataset", "ExperimentRecord", "build_design", "delta_log_transform",
    "load_dataset", "log_transform_dataset", "split_by_time", "write_dataset",
    "ConvergenceReport", "convergence_report", "effective_sample_size", "gelman_rubin", "mcse_mean",
    "split_gelman_rubin",
    "ScoreReport", "hpd_interval", "interval_score", "mape", "scaled_mse", "score",
    "KernelParams", "build_cov", "gp_condition", "kernel_eval",
    "KINDS", "ContractError", "Model", "ModelSpec", "ParamVector", "PriorConfig",
    "constrain", "grad_log_posterior", "log_posterior", "unconstrain",
    "PredictionTask", "predict", "predict_sigma2", "predict_theta", "predict_y", "summarize",
    "PosteriorDraws", "SamplerConfig", "leapfrog", "run_chains",
    "ScenarioConfig", "generate_dataset", "scenario_params",
    "read_draws", "write_draws",
]
