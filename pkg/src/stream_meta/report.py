"""Plot-ready posterior summaries of group and time effects."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io
from .evaluation import hpd_interval
from .sampler import PosteriorDraws

__all__ = ["group_summary", "time_effect_summary", "emit_report", "GROUP_FILE", "TIME_FILE"]

GROUP_FILE = "group_summary.csv"
TIME_FILE = "time_effect.csv"

_GROUP_BLOCKS = (("theta_a", "levels_a"), ("theta_b", "levels_b"),
                 ("delta_a", "levels_a"), ("delta_b", "levels_b"))


def _summary(col, alpha):
    lo, hi = hpd_interval(col, alpha)
    return float(np.median(col)), lo, hi


def group_summary(draws: PosteriorDraws, alpha=0.05) -> list[list]:
    """Rows (group, block, median, hpd_lower, hpd_upper) for every group-effect block present."""
    rows = []
    for block, key in _GROUP_BLOCKS:
        if block not in draws:
            continue
        values = draws.block(block)
        for k, label in enumerate(draws.meta[key]):
            rows.append([label, block, *_summary(values[:, k], alpha)])
    return rows


def time_effect_summary(draws: PosteriorDraws, alpha=0.05) -> list[list] | None:
    """Rows (time, median, hpd_lower, hpd_upper) in time order, or None without a time effect."""
    if "theta_c" not in draws:
        return None
    values = draws.block("theta_c")
    grid = draws.meta["time_grid"]
    order = np.argsort(grid, kind="stable")
    return [[float(grid[k]), *_summary(values[:, k], alpha)] for k in order]


def emit_report(draws: PosteriorDraws, out_dir, alpha=0.05) -> tuple[list[Path], list[str]]:
    """Write the group and time-effect CSVs; returns (written paths, notes on skipped files)."""
    out_dir = Path(out_dir)
    written, notes = [], []
    rows = group_summary(draws, alpha)
    path = out_dir / GROUP_FILE
    io.write_csv(path, ["group", "block", "median", "hpd_lower", "hpd_upper"], rows)
    written.append(path)
    rows = time_effect_summary(draws, alpha)
    if rows is None:
        notes.append(f"{TIME_FILE} skipped: model {draws.meta.get('kind', '?')} has no time effect")
    else:
        path = out_dir / TIME_FILE
        io.write_csv(path, ["time", "median", "hpd_lower", "hpd_upper"], rows)
        written.append(path)
    return written, notes
