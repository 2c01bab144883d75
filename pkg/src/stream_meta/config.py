"""Run configuration: one JSON document, validated in full before any file is touched.

Example::

    {
      "seed": 7,
      "data": {"path": "data.csv", "test_path": null, "truth_path": null,
               "columns": {"y": "effect"}, "log_transform": false},
      "simulation": {"scenario": "i", "reps": 1, "m": 80, "J": 30, "K": 6},
      "model": {"kind": "STREAM", "p_e": 12, "jitter": 1e-8, "priors": {"eta_a": 2.5}},
      "sampler": {"chains": 4, "warmup": 2000, "samples": 8000, "adapt_mass": true},
      "split": {"train_fraction": 0.8},
      "evaluation": {"alpha": 0.05},
      "output": {"directory": "out"}
    }

Every section and key is optional; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import KINDS, ContractError, ModelSpec, PriorConfig
from .sampler import SamplerConfig
from .simulate import SCENARIOS

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "config_hash"]


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "seed": None,
    "data": {"path", "test_path", "truth_path", "columns", "log_transform"},
    "simulation": {"scenario", "reps", "m", "J", "K"},
    "model": {"kind", "p_e", "jitter", "priors"},
    "sampler": {"chains", "warmup", "samples", "leapfrog_steps", "target_accept", "adapt_mass"},
    "split": {"train_fraction"},
    "evaluation": {"alpha"},
    "output": {"directory"},
}
_COLUMN_KEYS = {"id", "y", "s2", "n", "t", "group_a", "group_b", "x_prefix"}
_PRIOR_KEYS = {f.name for f in dataclasses.fields(PriorConfig)}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data_path: str | None = None
    test_path: str | None = None
    truth_path: str | None = None
    columns: dict = field(default_factory=dict)
    log_transform: bool = False
    scenario: str = "i"
    reps: int = 1
    sim_m: int = 80
    sim_J: int = 30
    sim_K: int = 6
    model: ModelSpec = field(default_factory=lambda: ModelSpec("STREAM"))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train_fraction: float | None = None
    alpha: float = 0.05
    out_dir: str = "out"

    def to_json(self) -> dict:
        """Canonical, JSON-serializable form (used for hashing and manifests)."""
        pr = dataclasses.asdict(self.model.priors)
        return {
            "seed": self.seed,
            "data": {"path": self.data_path, "test_path": self.test_path,
                     "truth_path": self.truth_path, "columns": dict(sorted(self.columns.items())),
                     "log_transform": self.log_transform},
            "simulation": {"scenario": self.scenario, "reps": self.reps, "m": self.sim_m,
                           "J": self.sim_J, "K": self.sim_K},
            "model": {"kind": self.model.kind, "p_e": self.model.period,
                      "jitter": self.model.jitter,
                      "priors": {k: list(v) if isinstance(v, tuple) else v for k, v in pr.items()}},
            "sampler": {k: getattr(self.sampler, k) for k in
                        ("chains", "warmup", "samples", "leapfrog_steps", "target_accept",
                         "adapt_mass")},
            "split": {"train_fraction": self.train_fraction},
            "evaluation": {"alpha": self.alpha},
            "output": {"directory": self.out_dir},
        }


def config_hash(cfg: RunConfig) -> str:
    text = json.dumps(cfg.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def _num(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def _str_or_none(value, name):
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{name} must be a string path, got {value!r}")
    return value


def parse_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a config mapping; ``overrides`` (dotted keys, e.g. ``model.kind``) win."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = json.loads(json.dumps(raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            sec = raw.setdefault(section, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            sec[name] = value
        else:
            raw[key] = value

    for key, value in raw.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        allowed = _SECTIONS[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            extra = set(value) - allowed
            if extra:
                raise ConfigError(f"unknown key(s) {sorted(extra)} in section {key!r}")

    seed = _int(raw.get("seed", 0), "seed", 0)
    data = raw.get("data", {})
    columns = data.get("columns", {}) or {}
    if not isinstance(columns, dict) or set(columns) - _COLUMN_KEYS:
        raise ConfigError(f"data.columns keys must be among {sorted(_COLUMN_KEYS)}")
    for k, v in columns.items():
        if not isinstance(v, str):
            raise ConfigError(f"data.columns.{k} must be a string")
    log_transform = data.get("log_transform", False)
    if not isinstance(log_transform, bool):
        raise ConfigError("data.log_transform must be true or false")

    sim = raw.get("simulation", {})
    scenario = str(sim.get("scenario", "i"))
    if scenario not in SCENARIOS:
        raise ConfigError(f"simulation.scenario must be one of {sorted(SCENARIOS)}, got {scenario!r}")

    mod = raw.get("model", {})
    kind = mod.get("kind", "STREAM")
    if kind not in KINDS:
        raise ConfigError(f"model.kind must be one of {', '.join(KINDS)}; got {kind!r}")
    priors = mod.get("priors", {}) or {}
    if not isinstance(priors, dict) or set(priors) - _PRIOR_KEYS:
        raise ConfigError(f"model.priors keys must be among {sorted(_PRIOR_KEYS)}")
    priors = {k: tuple(v) if isinstance(v, list) else v for k, v in priors.items()}
    try:
        spec = ModelSpec(kind, PriorConfig(**priors), period=_num(mod.get("p_e", 12.0), "model.p_e"),
                         jitter=_num(mod.get("jitter", 1e-8), "model.jitter"))
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from None
    if not spec.jitter > 0:
        raise ConfigError("model.jitter must be > 0")

    smp = raw.get("sampler", {})
    try:
        sampler = SamplerConfig(
            chains=_int(smp.get("chains", 4), "sampler.chains", 1),
            warmup=_int(smp.get("warmup", 2000), "sampler.warmup", 0),
            samples=_int(smp.get("samples", 8000), "sampler.samples", 1),
            leapfrog_steps=_int(smp.get("leapfrog_steps", 32), "sampler.leapfrog_steps", 1),
            target_accept=_num(smp.get("target_accept", 0.8), "sampler.target_accept"),
            seed=seed,
            adapt_mass=bool(smp.get("adapt_mass", False)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"sampler: {exc}") from None

    tf = raw.get("split", {}).get("train_fraction")
    if tf is not None:
        tf = _num(tf, "split.train_fraction")
        if not 0 < tf < 1:
            raise ConfigError(f"split.train_fraction must be in (0, 1), got {tf}")
    alpha = _num(raw.get("evaluation", {}).get("alpha", 0.05), "evaluation.alpha")
    if not 0 < alpha < 1:
        raise ConfigError(f"evaluation.alpha must be in (0, 1), got {alpha}")
    out_dir = raw.get("output", {}).get("directory", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output.directory must be a non-empty string")

    return RunConfig(
        seed=seed,
        data_path=_str_or_none(data.get("path"), "data.path"),
        test_path=_str_or_none(data.get("test_path"), "data.test_path"),
        truth_path=_str_or_none(data.get("truth_path"), "data.truth_path"),
        columns=dict(columns),
        log_transform=log_transform,
        scenario=scenario,
        reps=_int(sim.get("reps", 1), "simulation.reps", 1),
        sim_m=_int(sim.get("m", 80), "simulation.m", 2),
        sim_J=_int(sim.get("J", 30), "simulation.J", 1),
        sim_K=_int(sim.get("K", 6), "simulation.K", 1),
        model=spec,
        sampler=sampler,
        train_fraction=tf,
        alpha=alpha,
        out_dir=out_dir,
    )


def load_config(path, overrides=None) -> RunConfig:
    if path is None:
        return parse_config({}, overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return parse_config(raw, overrides)
