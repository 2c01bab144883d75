"""On-disk format for posterior draws.

A fit directory holds

``draws_chain{c}.csv``
    one file per chain (1-based ``c``); the header is the flattened
    parameter names (``alpha_theta``, ``theta_a.3``, ...), each row one
    post-warmup draw in model space, floats written with ``repr`` so the
    text round-trips exactly.
``draws_meta.json``
    block layout, per-chain sampler statistics and the fit metadata needed
    for prediction (level maps, time grid, mean training S^2, ...).
``draws.npz``
    binary cache of the same arrays (``chain_1``, ``chain_2``, ...), written
    with fixed zip timestamps so identical draws give identical bytes.
"""

from __future__ import annotations

import io as _io
import json
import zipfile
from pathlib import Path

import numpy as np

from . import io
from .model import ContractError, Layout
from .sampler import PosteriorDraws

__all__ = ["write_draws", "read_draws", "read_chain_csvs", "chain_csv_paths", "META_NAME", "NPZ_NAME"]

META_NAME = "draws_meta.json"
NPZ_NAME = "draws.npz"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _chain_name(c):
    return f"draws_chain{c + 1}.csv"


def chain_csv_paths(directory) -> list[Path]:
    """Chain CSVs in ``directory`` in chain order."""
    directory = Path(directory)
    paths = []
    while (directory / _chain_name(len(paths))).exists():
        paths.append(directory / _chain_name(len(paths)))
    return paths


def _npz_bytes(arrays: dict) -> bytes:
    buf = _io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            payload = _io.BytesIO()
            np.save(payload, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload.getvalue())
    return buf.getvalue()


def write_draws(draws: PosteriorDraws, directory) -> list[Path]:
    """Write chain CSVs, the npz cache and the metadata JSON; returns the paths."""
    directory = Path(directory)
    names = draws.names
    written = []
    for c, chain in enumerate(draws.chains):
        path = directory / _chain_name(c)
        io.write_csv(path, names, [[float(v) for v in row] for row in chain])
        written.append(path)
    npz = directory / NPZ_NAME
    io.atomic_write_bytes(npz, _npz_bytes({f"chain_{c + 1}": ch for c, ch in enumerate(draws.chains)}))
    written.append(npz)
    meta = {
        "layout": draws.layout.to_json(),
        "accept_rate": [float(v) for v in draws.accept_rate],
        "step_size": [float(v) for v in draws.step_size],
        "divergences": [int(v) for v in draws.divergences],
        "meta": draws.meta,
    }
    path = directory / META_NAME
    io.atomic_write_text(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def read_chain_csvs(paths) -> tuple[list[str], list[np.ndarray]]:
    """Header and ``samples x P`` arrays from per-chain CSV files."""
    if len(paths) == 0:
        raise ContractError("no chain CSV files given")
    header = None
    chains = []
    for p in paths:
        h, rows = io.read_csv(p)
        if header is None:
            header = h
        elif h != header:
            raise ContractError(f"{p}: header differs from the first chain file")
        try:
            chains.append(np.array(rows, dtype=float).reshape(len(rows), len(h)))
        except ValueError as exc:
            raise ContractError(f"{p}: malformed draw rows ({exc})") from None
    return header, chains


def read_draws(directory, prefer_cache=True) -> PosteriorDraws:
    """Load a fit written by :func:`write_draws` (npz cache first if present)."""
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.exists():
        raise ContractError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    layout = Layout.from_json(meta["layout"])
    npz = directory / NPZ_NAME
    if prefer_cache and npz.exists():
        with np.load(npz) as data:
            chains = [data[f"chain_{c + 1}"] for c in range(len(data.files))]
    else:
        header, chains = read_chain_csvs(chain_csv_paths(directory))
        if header != layout.flat_names():
            raise ContractError("chain CSV header does not match the stored layout")
    return PosteriorDraws(
        chains=chains,
        layout=layout,
        accept_rate=np.array(meta["accept_rate"]),
        step_size=np.array(meta["step_size"]),
        divergences=np.array(meta["divergences"]),
        meta=meta["meta"],
    )
