"""Experiment-level datasets: CSV ingestion, log transform, design matrices
and the time-ordered train/test split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "DataError",
    "ExperimentRecord",
    "Dataset",
    "DesignMatrices",
    "DEFAULT_SCHEMA",
    "load_dataset",
    "write_dataset",
    "delta_log_transform",
    "log_transform_dataset",
    "split_by_time",
    "build_design",
]

DEFAULT_SCHEMA = {
    "id": "id",
    "y": "y",
    "s2": "s2",
    "n": "n",
    "t": "t",
    "group_a": "group_a",
    "group_b": "group_b",
    "x_prefix": "x",
}


class DataError(ValueError):
    """Raised for schema, parse and validation problems in input data."""


@dataclass(frozen=True)
class ExperimentRecord:
    id: str
    y: float
    s2: float
    n: int
    t: float
    group_a: str
    group_b: str
    x: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.s2 > 0:
            raise DataError(f"record {self.id!r}: s2 must be > 0, got {self.s2}")
        if self.n < 2:
            raise DataError(f"record {self.id!r}: n must be >= 2, got {self.n}")


def _sorted_levels(values):
    return tuple(sorted(set(values)))


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of experiments plus label -> index maps.

    ``levels_a``/``levels_b`` list the group labels and ``times`` the sorted
    distinct time stamps; the index of a label in its tuple is its column in
    the design matrices. Subsets produced by :func:`split_by_time` keep the
    parent's maps so indices stay aligned across train and test.
    """

    records: tuple[ExperimentRecord, ...]
    levels_a: tuple[str, ...] = field(default=None)
    levels_b: tuple[str, ...] = field(default=None)
    times: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise DataError("a dataset needs at least one record")
        object.__setattr__(self, "records", records)
        if self.levels_a is None:
            object.__setattr__(self, "levels_a", _sorted_levels(r.group_a for r in records))
        if self.levels_b is None:
            object.__setattr__(self, "levels_b", _sorted_levels(r.group_b for r in records))
        if self.times is None:
            object.__setattr__(self, "times", _sorted_levels(r.t for r in records))
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise DataError("distinct-time list must be strictly increasing")
        q = {len(r.x) for r in records}
        if len(q) > 1:
            raise DataError(f"records disagree on covariate length: {sorted(q)}")
        index_a = set(self.levels_a)
        index_b = set(self.levels_b)
        times = set(self.times)
        for r in records:
            if r.group_a not in index_a or r.group_b not in index_b or r.t not in times:
                raise DataError(f"record {r.id!r} has labels outside the level maps")

    def __len__(self):
        return len(self.records)

    @property
    def m(self) -> int:
        return len(self.records)

    @property
    def q(self) -> int:
        return len(self.records[0].x) if self.records else 0

    @property
    def J(self) -> int:
        return len(self.levels_a)

    @property
    def K(self) -> int:
        return len(self.levels_b)

    @property
    def L(self) -> int:
        return len(self.times)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=float)

    @property
    def s2(self) -> np.ndarray:
        return np.array([r.s2 for r in self.records], dtype=float)

    @property
    def n(self) -> np.ndarray:
        return np.array([r.n for r in self.records], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=float)

    @property
    def X(self) -> np.ndarray:
        return np.array([r.x for r in self.records], dtype=float).reshape(self.m, self.q)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Records at ``indices`` (in that order) with this dataset's level maps."""
        return Dataset(
            tuple(self.records[i] for i in indices),
            levels_a=self.levels_a,
            levels_b=self.levels_b,
            times=self.times,
        )


@dataclass(frozen=True)
class DesignMatrices:
    Za: np.ndarray
    Zb: np.ndarray
    Zc: np.ndarray
    X: np.ndarray
    offsets: np.ndarray


def _parse_float(value, column, row):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: column {column!r} is not numeric: {value!r}") from None
    if not math.isfinite(out):
        raise DataError(f"row {row}: column {column!r} is not finite: {value!r}")
    return out


def load_dataset(path, schema: Mapping[str, str] | None = None) -> Dataset:
    """Read a dataset CSV.

    ``schema`` remaps the logical columns (``id``, ``y``, ``s2``, ``n``, ``t``,
    ``group_a``, ``group_b``) to header names; covariates are every column
    whose name starts with ``schema['x_prefix']`` followed by an integer,
    ordered by that integer. Row numbers in error messages are 1-based data
    rows (the header is row 0).
    """
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("y", "s2", "n", "t", "group_a", "group_b"):
            if cols[key] not in header:
                raise DataError(f"missing column {cols[key]!r} (for {key}) in {path}")
        prefix = cols["x_prefix"]
        xcols = sorted(
            (c for c in header if c.startswith(prefix) and c[len(prefix):].isdigit()),
            key=lambda c: int(c[len(prefix):]),
        )
        has_id = cols["id"] in header
        records = []
        for row, line in enumerate(reader, start=1):
            n = _parse_float(line[cols["n"]], cols["n"], row)
            if n != int(n):
                raise DataError(f"row {row}: column {cols['n']!r} must be an integer: {n}")
            y = _parse_float(line[cols["y"]], cols["y"], row)
            s2 = _parse_float(line[cols["s2"]], cols["s2"], row)
            t = _parse_float(line[cols["t"]], cols["t"], row)
            x = tuple(_parse_float(line[c], c, row) for c in xcols)
            if int(n) < 2:
                raise DataError(f"row {row}: n must be >= 2 (got {int(n)})")
            if s2 <= 0:
                raise DataError(f"row {row}: s2 must be > 0 (got {s2})")
            records.append(
                ExperimentRecord(
                    id=line[cols["id"]] if has_id else str(row),
                    y=y,
                    s2=s2,
                    n=int(n),
                    t=t,
                    group_a=line[cols["group_a"]],
                    group_b=line[cols["group_b"]],
                    x=x,
                )
            )
    if not records:
        raise DataError(f"{path} contains no data rows")
    return Dataset(tuple(records))


def write_dataset(d: Dataset, path) -> None:
    """Write ``d`` in the CSV layout :func:`load_dataset` reads."""
    from .io import atomic_write_text

    lines = [",".join(["id", "y", "s2", "n", "t", "group_a", "group_b"]
                      + [f"x{k + 1}" for k in range(d.q)])]
    for r in d.records:
        fields = [r.id, repr(r.y), repr(r.s2), str(r.n), repr(r.t), r.group_a, r.group_b]
        fields += [repr(v) for v in r.x]
        lines.append(",".join(fields))
    atomic_write_text(path, "\n".join(lines) + "\n")


def delta_log_transform(y: float, s2: float) -> tuple[float, float]:
    """Return ``(log y, s2 / y**2)``, the first-order variance of ``log y``."""
    if not y > 0:
        raise DataError(f"log transform needs y > 0, got {y}")
    if not s2 > 0:
        raise DataError(f"s2 must be > 0, got {s2}")
    return math.log(y), s2 / (y * y)


def log_transform_dataset(d: Dataset) -> Dataset:
    records = []
    for r in d.records:
        ly, ls2 = delta_log_transform(r.y, r.s2)
        records.append(ExperimentRecord(r.id, ly, ls2, r.n, r.t, r.group_a, r.group_b, r.x))
    return Dataset(tuple(records), d.levels_a, d.levels_b, d.times)


def split_by_time(d: Dataset, train_fraction: float) -> tuple[Dataset, Dataset]:
    """Hold out the most recent experiments.

    The test set is the ``ceil(m * (1 - train_fraction))`` records with the
    largest ``t``; equal times are broken towards later input position.
    Both halves keep input order and the parent's level maps.
    """
    if not 0 < train_fraction < 1:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    m = d.m
    if m < 2:
        raise DataError("split needs at least 2 records")
    # round() guards against 1 - 0.7 = 0.30000000000000004 style ceilings
    n_test = math.ceil(round(m * (1.0 - train_fraction), 9))
    if n_test < 1 or n_test >= m:
        raise DataError(f"split of {m} records at {train_fraction} leaves an empty part")
    order = sorted(range(m), key=lambda i: (d.records[i].t, i), reverse=True)
    test_idx = sorted(order[:n_test])
    held = set(test_idx)
    train_idx = [i for i in range(m) if i not in held]
    return d.subset(train_idx), d.subset(test_idx)


def build_design(d: Dataset) -> DesignMatrices:
    m = d.m
    ia = {v: k for k, v in enumerate(d.levels_a)}
    ib = {v: k for k, v in enumerate(d.levels_b)}
    it = {v: k for k, v in enumerate(d.times)}
    Za = np.zeros((m, d.J))
    Zb = np.zeros((m, d.K))
    Zc = np.zeros((m, d.L))
    for i, r in enumerate(d.records):
        Za[i, ia[r.group_a]] = 1.0
        Zb[i, ib[r.group_b]] = 1.0
        Zc[i, it[r.t]] = 1.0
    return DesignMatrices(Za=Za, Zb=Zb, Zc=Zc, X=d.X, offsets=np.log(d.n))
