"""Tabular ingestion, dummy encoding, cutpoint grids and train/test splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DataError",
    "VarMeta",
    "DataSet",
    "CutpointGrid",
    "load_csv",
    "load_like",
    "write_csv",
    "make_cutpoints",
    "train_test_split",
    "DEFAULT_MAX_CUTS",
]

DEFAULT_MAX_CUTS = 100

_MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True)
class VarMeta:
    """Column tag: ``kind`` is ``"continuous"`` or ``"dummy"``.

    For dummies ``parent`` names the source categorical column and
    ``level`` the category that the column indicates.
    """

    kind: str
    parent: str | None = None
    level: str | None = None


@dataclass(frozen=True)
class DataSet:
    """Predictor matrix ``x`` (n, d), response ``y`` (n,), column metadata."""

    x: np.ndarray
    y: np.ndarray
    var_meta: tuple[VarMeta, ...]
    names: tuple[str, ...]
    response_name: str = "y"

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise DataError("x must be a 2-d matrix")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError("need n >= 1 and d >= 1")
        if len(self.names) != x.shape[1] or len(self.var_meta) != x.shape[1]:
            raise DataError("names/var_meta length does not match the column count")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("non-finite values in data")
        for j, meta in enumerate(self.var_meta):
            if meta.kind == "dummy" and not np.all((x[:, j] == 0) | (x[:, j] == 1)):
                raise DataError(f"dummy column {self.names[j]!r} is not 0/1")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "DataSet":
        rows = np.asarray(rows)
        return DataSet(self.x[rows], self.y[rows], self.var_meta, self.names,
                       self.response_name)

    @classmethod
    def from_arrays(cls, x, y, names: Sequence[str] | None = None,
                    response_name: str = "y") -> "DataSet":
        """Wrap numeric arrays; every column is tagged continuous."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if names is None:
            names = [f"x{j + 1}" for j in range(x.shape[1])]
        meta = tuple(VarMeta("continuous") for _ in range(x.shape[1]))
        return cls(x, np.asarray(y, dtype=float), meta, tuple(names), response_name)


@dataclass(frozen=True)
class CutpointGrid:
    """Ascending candidate cutpoints for each predictor column."""

    cuts: tuple[np.ndarray, ...]
    sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cuts = []
        for c in self.cuts:
            c = np.array(c, dtype=float).reshape(-1)
            if c.size > 1 and not np.all(np.diff(c) > 0):
                raise DataError("cutpoints must be strictly increasing")
            c.setflags(write=False)
            cuts.append(c)
        object.__setattr__(self, "cuts", tuple(cuts))
        sizes = np.array([c.size for c in cuts], dtype=np.int32)
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)

    @property
    def d(self) -> int:
        return len(self.cuts)

    def __getitem__(self, j: int) -> np.ndarray:
        return self.cuts[j]

    def code(self, x) -> np.ndarray:
        """Integer-code predictors: entry ``(i, v)`` counts cutpoints <= x[i, v].

        Under this coding ``x[i, v] < cuts[v][k]`` iff ``code[i, v] <= k``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise DataError(f"expected {self.d} predictor columns, got {x.shape[1]}")
        out = np.empty(x.shape, dtype=np.int32)
        for v, c in enumerate(self.cuts):
            out[:, v] = np.searchsorted(c, x[:, v], side="right")
        return out


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING


def _parse_float(cell: str):
    try:
        val = float(cell)
    except ValueError:
        return None
    return val if math.isfinite(val) else None


def load_csv(path, response_column: str, categorical: Sequence[str] = (),
             exclude: Sequence[str] = ()) -> DataSet:
    """Read a headed CSV file into a :class:`DataSet`.

    Columns whose cells all parse as finite numbers are continuous; any
    other column (or one listed in ``categorical``) is expanded into one
    0/1 dummy column per level. Dummies are named ``<column>.<level>``,
    take the place of their source column and follow sorted level order.
    Missing cells (empty, ``NA``, ``NaN``, ``null``) are a load error.
    Columns named in ``exclude`` are skipped if present.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if response_column not in header:
        raise DataError(f"{path}: response column {response_column!r} not in header")
    if len(body) < 2:
        raise DataError(f"{path}: need at least 2 data rows, found {len(body)}")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
        for j, cell in enumerate(r):
            if _is_missing(cell):
                raise DataError(f"{path}: missing value at row {i + 2}, column {header[j]!r}")

    yj = header.index(response_column)
    y = []
    for i, r in enumerate(body):
        val = _parse_float(r[yj])
        if val is None:
            raise DataError(f"{path}: non-numeric response at row {i + 2}, "
                            f"column {response_column!r}: {r[yj]!r}")
        y.append(val)

    cols, names, meta = [], [], []
    for j, name in enumerate(header):
        if j == yj or name in exclude:
            continue
        cells = [r[j].strip() for r in body]
        values = [_parse_float(c) for c in cells]
        if name not in categorical and all(v is not None for v in values):
            cols.append(np.array(values, dtype=float))
            names.append(name)
            meta.append(VarMeta("continuous"))
            continue
        for level in sorted(set(cells)):
            cols.append(np.array([c == level for c in cells], dtype=float))
            names.append(f"{name}.{level}")
            meta.append(VarMeta("dummy", parent=name, level=level))
    if not cols:
        raise DataError(f"{path}: no predictor columns")
    return DataSet(np.column_stack(cols), np.array(y), tuple(meta), tuple(names),
                   response_column)


def load_like(path, names: Sequence[str], var_meta: Sequence[VarMeta],
              response_column: str | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Encode a CSV with the column layout of an existing DataSet.

    Continuous columns are read by name; dummy column ``c.level`` is 1 where
    column ``c`` equals ``level`` (unseen levels give all-zero dummies).
    Returns ``(x, y)``; ``y`` is None when ``response_column`` is None or absent.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    col = {h: j for j, h in enumerate(header)}

    def cells(name):
        if name not in col:
            raise DataError(f"{path}: column {name!r} not in header")
        j = col[name]
        out = []
        for i, r in enumerate(body):
            if len(r) != len(header):
                raise DataError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
            if _is_missing(r[j]):
                raise DataError(f"{path}: missing value at row {i + 2}, column {name!r}")
            out.append(r[j].strip())
        return out

    def numbers(name):
        vals = []
        for i, c in enumerate(cells(name)):
            v = _parse_float(c)
            if v is None:
                raise DataError(f"{path}: non-numeric value at row {i + 2}, column {name!r}: {c!r}")
            vals.append(v)
        return np.array(vals)

    x = np.empty((len(body), len(names)))
    for j, (name, meta) in enumerate(zip(names, var_meta)):
        if meta.kind == "continuous":
            x[:, j] = numbers(name)
        else:
            x[:, j] = [c == meta.level for c in cells(meta.parent)]
    y = None
    if response_column is not None and response_column in col:
        y = numbers(response_column)
    return x, y


def write_csv(ds: DataSet, path) -> None:
    """Write ``ds`` so that :func:`load_csv` reproduces it exactly.

    Dummy groups are folded back into their categorical source column and
    floats are written with ``repr`` (shortest round-trip form).
    """
    header, getters = [], []
    seen = set()
    for j, (name, meta) in enumerate(zip(ds.names, ds.var_meta)):
        if meta.kind == "continuous":
            header.append(name)
            getters.append(lambda i, j=j: repr(float(ds.x[i, j])))
        elif meta.parent not in seen:
            seen.add(meta.parent)
            group = [(k, m.level) for k, m in enumerate(ds.var_meta)
                     if m.kind == "dummy" and m.parent == meta.parent]

            def level_of(i, group=group):
                hits = [lvl for k, lvl in group if ds.x[i, k] == 1]
                if len(hits) != 1:
                    raise DataError("dummy group is not one-hot; cannot fold back")
                return hits[0]

            header.append(meta.parent)
            getters.append(level_of)
    header.append(ds.response_name)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            w.writerow([g(i) for g in getters] + [repr(float(ds.y[i]))])


def make_cutpoints(ds: DataSet, max_cuts: int = DEFAULT_MAX_CUTS) -> CutpointGrid:
    """Equally spaced interior cutpoints per continuous column; 0.5 for dummies.

    A constant column gets an empty grid and can never be split on.
    """
    if max_cuts < 1:
        raise ValueError("max_cuts must be >= 1")
    cuts = []
    for j, meta in enumerate(ds.var_meta):
        lo, hi = ds.x[:, j].min(), ds.x[:, j].max()
        if lo == hi:
            cuts.append(np.empty(0))
        elif meta.kind == "dummy":
            cuts.append(np.array([0.5]))
        else:
            c = lo + (hi - lo) * np.arange(1, max_cuts + 1) / (max_cuts + 1)
            # rounding can collapse neighbours for tiny ranges
            c = np.unique(c[(c > lo) & (c < hi)])
            cuts.append(c)
    return CutpointGrid(tuple(cuts))


def train_test_split(ds: DataSet, fraction: float, seed: int) -> tuple[DataSet, DataSet]:
    """Random partition with ``floor(fraction * n)`` training rows.

    Row order inside each part follows the original order.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n_train = int(math.floor(fraction * ds.n + 1e-9))
    if n_train < 2:
        raise DataError(f"training part would have {n_train} rows; need >= 2")
    if n_train >= ds.n:
        raise DataError("test part would be empty")
    perm = np.random.default_rng(seed).permutation(ds.n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))
