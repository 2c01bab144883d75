"""Command-line pipeline: simulate, fit, predict, evaluate, diagnose, report, run.

Usage::

    stream-meta simulate --scenario i --reps 3 --seed 7 --out sims
    stream-meta fit --data sims/sim_i_001.csv --model STREAM --out fit --config run.json
    stream-meta predict --out fit
    stream-meta evaluate --truth sims/sim_i_001_truth.csv --out fit
    stream-meta diagnose --out fit
    stream-meta report --out fit
    stream-meta run --scenario i --seed 7 --out pipeline   # all of the above on one dataset

Settings come from the JSON file given by ``--config`` (see
:mod:`stream_meta.config`); command-line flags override it. Every file is
written atomically, and files created by a command that fails are removed.
Each command leaves ``manifest_<command>.json`` recording the config hash,
seed, library versions and wall time.

Files in an output directory:

* ``train.csv`` / ``test.csv``: split of the input when ``split.train_fraction`` is set
* draws: see :mod:`stream_meta.store` (``draws_chain<c>.csv``, ``draws.npz``, ``draws_meta.json``)
* ``predictions.csv``: test_id, draw, theta_tilde, sigma2_tilde, y_tilde
* ``prediction_summary.csv``: test_id, theta_median, y_median, y_hpd_lower, y_hpd_upper
* ``scores.json``, ``convergence.json``, ``group_summary.csv``, ``time_effect.csv``

Exit codes: 0 success, 1 ``diagnose`` found R-hat above the threshold,
2 configuration or input error, 3 numerical or sampler failure. The
environment variable ``STREAM_META_THREADS`` caps the number of chains run
in parallel.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io, store
from .config import ConfigError, RunConfig, config_hash, load_config
from .data import DataError, Dataset, load_dataset, log_transform_dataset, split_by_time, write_dataset
from .diagnostics import convergence_report
from .evaluation import score
from .kernel import FactorizationError
from .model import ContractError, NonFiniteGradientError
from .prediction import PredictionTask, predict, read_summary, write_predictions, write_summary
from .report import emit_report
from .sampler import SamplerError, run_chains
from .simulate import generate_dataset, scenario_params

__all__ = ["main", "build_parser", "replication_seed"]

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def replication_seed(seed: int, rep: int) -> int:
    """Seed of replication ``rep`` (1-based) under base seed ``seed``."""
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stream-meta", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        return p

    def sampling(p):
        p.add_argument("--model", help="model kind, e.g. STREAM or RE-GP")
        p.add_argument("--chains", type=int)
        p.add_argument("--warmup", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--data", help="dataset CSV (overrides data.path)")

    p = common(sub.add_parser("simulate", help="write simulated datasets and their truth"))
    p.add_argument("--scenario", choices=["i", "ii", "iii", "iv"])
    p.add_argument("--reps", type=int)

    sampling(common(sub.add_parser("fit", help="sample the posterior of one model")))

    p = common(sub.add_parser("predict", help="posterior-predictive draws for test experiments"))
    p.add_argument("--draws", help="fit directory (default: --out)")
    p.add_argument("--model", help="model kind (default: the kind recorded with the fit)")
    p.add_argument("--test", help="test dataset CSV (default: data.test_path or <draws>/test.csv)")

    p = common(sub.add_parser("evaluate", help="score a prediction summary against the truth"))
    p.add_argument("--truth", help="truth CSV with id, theta_true, sigma2_true")
    p.add_argument("--summary", help="prediction summary CSV (default: <out>/prediction_summary.csv)")

    p = common(sub.add_parser("diagnose", help="Gelman-Rubin R-hat from per-chain draw CSVs"))
    p.add_argument("--draws", help="fit directory (default: --out)")
    p.add_argument("--threshold", type=float, default=1.1)
    p.add_argument("--split", action="store_true", help="use split R-hat")
    p.add_argument("--top-level", action="store_true",
                   help="exclude the per-experiment sigma2 latents")

    p = common(sub.add_parser("report", help="group and time-effect summary CSVs"))
    p.add_argument("--draws", help="fit directory (default: --out)")

    p = common(sub.add_parser("run", help="simulate, fit, predict, evaluate, diagnose and report"))
    p.add_argument("--scenario", choices=["i", "ii", "iii", "iv"])
    sampling(p)
    return parser


def _overrides(args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "seed": get("seed"),
        "output.directory": get("out"),
        "simulation.scenario": get("scenario"),
        "simulation.reps": get("reps"),
        "model.kind": get("model"),
        "sampler.chains": get("chains"),
        "sampler.warmup": get("warmup"),
        "sampler.samples": get("samples"),
        "data.path": get("data"),
        "data.test_path": get("test"),
        "data.truth_path": get("truth"),
    }


def _require_file(path, what):
    if path is None:
        raise ConfigError(f"{what} is required")
    if not Path(path).is_file():
        raise ConfigError(f"{what} {path} does not exist")
    return Path(path)


def _load(cfg: RunConfig, path) -> Dataset:
    d = load_dataset(path, cfg.columns or None)
    return log_transform_dataset(d) if cfg.log_transform else d


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


# -- commands: each validates inputs first, then returns (written paths, notes, extra) --


def _simulate(cfg, args, out):
    jobs = []
    for rep in range(1, cfg.reps + 1):
        sc = scenario_params(cfg.scenario, m=cfg.sim_m, J=cfg.sim_J, K=cfg.sim_K,
                             seed=replication_seed(cfg.seed, rep))
        jobs.append((rep, sc))
    written = []
    for rep, sc in jobs:
        d, truth = generate_dataset(sc)
        stem = out / f"sim_{cfg.scenario}_{rep:03d}"
        write_dataset(d, stem.with_suffix(".csv"))
        io.write_csv(Path(f"{stem}_truth.csv"), ["id", "theta_true", "sigma2_true"],
                     [[i, float(a), float(b)] for i, a, b in zip(truth.ids, truth.theta, truth.sigma2)])
        written += [stem.with_suffix(".csv"), Path(f"{stem}_truth.csv")]
    return written, [], {"replication_seeds": [sc.seed for _, sc in jobs]}


def _fit(cfg, args, out):
    path = _require_file(cfg.data_path, "data.path (--data)")
    d = _load(cfg, path)
    written = []
    if cfg.train_fraction is not None:
        train, test = split_by_time(d, cfg.train_fraction)
    else:
        train, test = d, None
    draws = run_chains(cfg.model, train, cfg.sampler)
    if test is not None:
        write_dataset(train, out / "train.csv")
        write_dataset(test, out / "test.csv")
        written += [out / "train.csv", out / "test.csv"]
    written += store.write_draws(draws, out)
    extra = {"accept_rate": draws.accept_rate.tolist(), "divergences": draws.divergences.tolist(),
             "step_size": draws.step_size.tolist()}
    return written, [], extra


def _draws_dir(args, out):
    return Path(args.draws) if getattr(args, "draws", None) else out


def _predict(cfg, args, out):
    ddir = _draws_dir(args, out)
    if not (ddir / store.META_NAME).is_file():
        raise ConfigError(f"no fit found in {ddir} ({store.META_NAME} missing)")
    test_path = _require_file(cfg.test_path or ddir / "test.csv", "test dataset (--test)")
    test = _load(cfg, test_path)
    draws = store.read_draws(ddir)
    spec = cfg.model
    if getattr(args, "model", None) is None and "kind" in draws.meta:
        spec = dataclasses.replace(spec, kind=draws.meta["kind"])
    pred = predict(PredictionTask(test, draws, spec, cfg.seed))
    write_predictions(pred, out / "predictions.csv")
    write_summary(pred, out / "prediction_summary.csv", cfg.alpha)
    return [out / "predictions.csv", out / "prediction_summary.csv"], [], {}


def _read_truth(path):
    header, rows = io.read_csv(path)
    for col in ("id", "theta_true"):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    i, k = header.index("id"), header.index("theta_true")
    try:
        return {r[i]: float(r[k]) for r in rows}
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _evaluate(cfg, args, out):
    truth_path = _require_file(cfg.truth_path, "data.truth_path (--truth)")
    summary_path = _require_file(args.summary or out / "prediction_summary.csv", "--summary")
    truth = _read_truth(truth_path)
    summary = read_summary(summary_path)
    missing = [k for k in summary if k not in truth]
    if missing:
        raise DataError(f"truth file lacks test ids {missing[:5]}")
    ids = list(summary)
    rep = score([truth[k] for k in ids], [summary[k][0] for k in ids],
                [summary[k][2] for k in ids], [summary[k][3] for k in ids], cfg.alpha)
    io.atomic_write_text(out / "scores.json", json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"n={rep.n_eval} MAPE={rep.mape:.4f} scaled_MSE={rep.scaled_mse:.6f} "
          f"IS={rep.interval_score:.4f} alpha={rep.alpha}")
    return [out / "scores.json"], [], rep.to_dict()


def _diagnose(cfg, args, out):
    ddir = _draws_dir(args, out)
    paths = store.chain_csv_paths(ddir)
    if len(paths) < 2:
        raise ConfigError(f"diagnose needs at least 2 chain CSVs in {ddir}, found {len(paths)}")
    names, chains = store.read_chain_csvs(paths)
    include = (lambda n: not n.startswith("sigma2.")) if args.top_level else None
    rep = convergence_report(chains, names, args.threshold, split=args.split, include=include)
    io.atomic_write_text(out / "convergence.json",
                         json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"max R-hat {rep.max_r_hat:.4f}, median {rep.median_r_hat:.4f}: "
          + ("converged" if rep.converged else "NOT converged"))
    return [out / "convergence.json"], [], {"converged": rep.converged, "max_r_hat": rep.to_dict()["max_r_hat"]}


def _report(cfg, args, out):
    ddir = _draws_dir(args, out)
    if not (ddir / store.META_NAME).is_file():
        raise ConfigError(f"no fit found in {ddir} ({store.META_NAME} missing)")
    written, notes = emit_report(store.read_draws(ddir), out, cfg.alpha)
    for note in notes:
        print(note, file=sys.stderr)
    return written, notes, {}


def _run(cfg, args, out):
    written = []
    if cfg.data_path is None:
        sc = scenario_params(cfg.scenario, m=cfg.sim_m, J=cfg.sim_J, K=cfg.sim_K, seed=cfg.seed)
        d, truth = generate_dataset(sc)
        write_dataset(d, out / "data.csv")
        io.write_csv(out / "truth.csv", ["id", "theta_true", "sigma2_true"],
                     [[i, float(a), float(b)] for i, a, b in zip(truth.ids, truth.theta, truth.sigma2)])
        cfg = dataclasses.replace(cfg, data_path=str(out / "data.csv"),
                                  truth_path=str(out / "truth.csv"))
        written += [out / "data.csv", out / "truth.csv"]
    else:
        _require_file(cfg.data_path, "data.path (--data)")
        _require_file(cfg.truth_path, "data.truth_path")
    if cfg.train_fraction is None:
        cfg = dataclasses.replace(cfg, train_fraction=0.8)
    extra = {}
    for step in (_fit, _predict, _evaluate, _diagnose, _report):
        w, _, e = step(cfg, args, out)
        written += w
        extra[step.__name__.strip("_")] = e
    return written, [], extra


_COMMANDS = {"simulate": _simulate, "fit": _fit, "predict": _predict, "evaluate": _evaluate,
             "diagnose": _diagnose, "report": _report, "run": _run}


def _defaults_for(args):
    if args.command == "diagnose":
        args.split = bool(args.split)
        args.top_level = bool(args.top_level)
    elif args.command == "run":
        args.summary = None
        args.draws = None
        args.split = False
        args.top_level = False
        args.threshold = 1.1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _defaults_for(args)
    started = time.time()
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    before = set(out.iterdir()) if out.is_dir() else None
    status = EXIT_OK
    try:
        written, notes, extra = _COMMANDS[args.command](cfg, args, out)
        if args.command == "diagnose" and not extra["converged"]:
            status = EXIT_NOT_CONVERGED
        manifest = {
            "command": args.command,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "config": cfg.to_json(),
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "versions": _versions(),
            "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "wall_time_s": round(time.time() - started, 3),
            "outputs": sorted(str(p) for p in written),
            "notes": notes,
            "result": extra,
        }
        io.atomic_write_text(out / f"manifest_{args.command}.json",
                             json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return status
    except (ConfigError, DataError, ContractError) as exc:
        status = EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
    except (SamplerError, NonFiniteGradientError, FactorizationError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        status = EXIT_NUMERIC
        print(f"numerical error: {exc}", file=sys.stderr)
    _cleanup(out, before)
    return status


def _cleanup(out: Path, before):
    """Remove whatever a failed command created."""
    if not out.is_dir():
        return
    for p in out.iterdir():
        if (before is None or p not in before) and p.is_file():
            p.unlink()
    if before is None and not any(out.iterdir()):
        out.rmdir()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
