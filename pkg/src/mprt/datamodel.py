"""Mixed continuous/ordinal datasets: types, CSV + JSON-schema I/O, discretization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataError

CONTINUOUS = "continuous"
ORDINAL = "ordinal"


@dataclass(frozen=True)
class ColumnMeta:
    """Name and measurement kind of one column.

    ``levels`` is the number of ordinal categories ``C >= 2`` and must be
    ``None`` for continuous columns.
    """

    name: str
    kind: str = CONTINUOUS
    levels: int | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, ORDINAL):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == ORDINAL:
            if self.levels is None or int(self.levels) != self.levels or self.levels < 2:
                raise DataError(f"column {self.name!r}: ordinal columns need levels >= 2")
        elif self.levels is not None:
            raise DataError(f"column {self.name!r}: continuous columns take no levels")

    @property
    def is_ordinal(self) -> bool:
        return self.kind == ORDINAL

    @classmethod
    def continuous(cls, name: str) -> "ColumnMeta":
        return cls(name, CONTINUOUS)

    @classmethod
    def ordinal(cls, name: str, levels: int) -> "ColumnMeta":
        return cls(name, ORDINAL, int(levels))

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.is_ordinal:
            out["levels"] = self.levels
        return out


def _check_ordinal_column(col: np.ndarray, meta: ColumnMeta, j: int) -> None:
    bad = ~np.isfinite(col) | (col != np.round(col))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"row {i}, column {meta.name!r} (#{j}): non-integer ordinal cell {col[i]!r}")
    out = (col < 1) | (col > meta.levels)
    if out.any():
        i = int(np.flatnonzero(out)[0])
        raise DataError(
            f"row {i}, column {meta.name!r} (#{j}): level out of range "
            f"(got {int(col[i])}, levels={meta.levels})"
        )
    seen = np.unique(col).astype(int)
    if seen.size < 2:
        raise DataError(f"column {meta.name!r}: ordinal column attains fewer than 2 levels")
    if seen[-1] - seen[0] + 1 != seen.size:
        missing = sorted(set(range(seen[0], seen[-1] + 1)) - set(seen.tolist()))
        raise DataError(f"column {meta.name!r}: gap in observed levels, missing {missing}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``N x M`` observation matrix with per-column metadata.

    Ordinal cells are stored as integer-valued floats in ``1..C``. The
    array is copied and made read-only on construction.
    """

    values: np.ndarray
    metas: tuple[ColumnMeta, ...]
    standardized: bool = field(default=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise DataError("dataset values must be a 2-D matrix")
        metas = tuple(self.metas)
        if values.shape[1] != len(metas):
            raise DataError(f"{values.shape[1]} data columns but {len(metas)} column metas")
        if values.shape[0] == 0:
            raise DataError("N=0 unsupported")
        names = [m.name for m in metas]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        if np.isnan(values).any():
            i, j = map(int, np.argwhere(np.isnan(values))[0])
            raise DataError(f"row {i}, column {names[j]!r}: missing value")
        for j, meta in enumerate(metas):
            if meta.is_ordinal:
                _check_ordinal_column(values[:, j], meta, j)
            elif not np.isfinite(values[:, j]).all():
                i = int(np.flatnonzero(~np.isfinite(values[:, j]))[0])
                raise DataError(f"row {i}, column {names[j]!r}: non-finite value")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "metas", metas)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.metas]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def indices_of(self, names: Iterable[str]) -> list[int]:
        return [self.index_of(n) for n in names]

    def is_ordinal(self, j: int) -> bool:
        return self.metas[j].is_ordinal

    @property
    def ordinal_mask(self) -> np.ndarray:
        return np.array([m.is_ordinal for m in self.metas], dtype=bool)

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def codes(self, j: int) -> np.ndarray:
        """Integer codes of ordinal column ``j``."""
        return self.values[:, j].astype(np.intp)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.metas == other.metas and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.metas, self.values.shape))


@dataclass(frozen=True)
class VariableSet:
    """Ordered index lists for the two sides ``X`` and ``Y`` of a rank test."""

    x_indices: tuple[int, ...]
    y_indices: tuple[int, ...]

    def __post_init__(self):
        x = tuple(int(i) for i in self.x_indices)
        y = tuple(int(i) for i in self.y_indices)
        if not x or not y:
            raise DataError("both variable sets must be non-empty")
        if len(set(x)) != len(x) or len(set(y)) != len(y):
            raise DataError("duplicate index within a variable set")
        object.__setattr__(self, "x_indices", x)
        object.__setattr__(self, "y_indices", y)

    @property
    def p(self) -> int:
        return len(self.x_indices)

    @property
    def q(self) -> int:
        return len(self.y_indices)

    @property
    def k_max(self) -> int:
        return min(self.p, self.q)

    def union(self) -> list[int]:
        """Indices of ``X ∪ Y`` in first-seen order."""
        return list(dict.fromkeys(self.x_indices + self.y_indices))

    def validate(self, n_cols: int) -> None:
        for i in self.x_indices + self.y_indices:
            if not 0 <= i < n_cols:
                raise DataError(f"variable index {i} out of range [0, {n_cols})")


def read_schema(schema_path: str | Path) -> list[ColumnMeta]:
    try:
        raw = json.loads(Path(schema_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read schema {schema_path}: {exc}") from exc
    cols = raw.get("columns") if isinstance(raw, dict) else None
    if not isinstance(cols, list):
        raise DataError("schema must be an object with a 'columns' list")
    metas = []
    for c in cols:
        try:
            metas.append(ColumnMeta(c["name"], c["kind"], c.get("levels")))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema column entry {c!r}") from exc
    return metas


def load_dataset(csv_path: str | Path, schema_path: str | Path) -> Dataset:
    """Read a CSV with a JSON schema sidecar into a validated :class:`Dataset`."""
    metas = read_schema(schema_path)
    names = [m.name for m in metas]
    try:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {csv_path}: {exc}") from exc
    if not rows:
        raise DataError("CSV has no header row")
    header = [h.strip() for h in rows[0]]
    if header != names:
        raise DataError(f"CSV header {header} does not match schema columns {names}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataError("N=0 unsupported")
    values = np.empty((len(body), len(metas)))
    for i, row in enumerate(body):
        if len(row) != len(metas):
            raise DataError(f"row {i}: expected {len(metas)} cells, got {len(row)}")
        for j, (cell, meta) in enumerate(zip(row, metas)):
            cell = cell.strip()
            if cell == "" or cell.lower() in ("na", "nan"):
                raise DataError(f"row {i}, column {meta.name!r}: missing value")
            if meta.is_ordinal:
                try:
                    level = int(cell)
                except ValueError:
                    raise DataError(
                        f"row {i}, column {meta.name!r}: non-integer ordinal cell {cell!r}"
                    ) from None
                if not 1 <= level <= meta.levels:
                    raise DataError(
                        f"row {i}, column {meta.name!r}: level out of range "
                        f"(got {level}, levels={meta.levels})"
                    )
                values[i, j] = level
            else:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"row {i}, column {meta.name!r}: cannot parse {cell!r} as a number"
                    ) from None
    return Dataset(values, tuple(metas))


def save_dataset(d: Dataset, csv_path: str | Path, schema_path: str | Path) -> None:
    """Write ``d`` so that :func:`load_dataset` reproduces it bit-exactly."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(d.names)
        for row in d.values:
            w.writerow(
                str(int(v)) if m.is_ordinal else repr(float(v)) for v, m in zip(row, d.metas)
            )
    Path(schema_path).write_text(
        json.dumps({"columns": [m.to_json() for m in d.metas]}, indent=2), encoding="utf-8"
    )


def standardize(d: Dataset) -> Dataset:
    """Center and scale continuous columns to unit sample variance (ddof=1).

    Ordinal columns pass through untouched.
    """
    if d.n_rows < 2:
        raise DataError("standardization needs N >= 2")
    values = np.array(d.values)
    for j, meta in enumerate(d.metas):
        if meta.is_ordinal:
            continue
        col = values[:, j]
        sd = col.std(ddof=1)
        if not sd > 0:
            raise DataError(f"column {meta.name!r}: zero variance, cannot standardize")
        values[:, j] = (col - col.mean()) / sd
    return Dataset(values, d.metas, standardized=True)


def ensure_standardized(d: Dataset) -> Dataset:
    return d if d.standardized else standardize(d)


def discretize_column(values: Sequence[float], thresholds: Sequence[float]) -> np.ndarray:
    """Map reals to levels ``1..C`` given the ``C-1`` interior thresholds.

    A value equal to a threshold falls in the lower (right-closed) interval.
    """
    thr = np.asarray(thresholds, dtype=float)
    if thr.ndim != 1 or thr.size < 1:
        raise DataError("need at least one interior threshold (C >= 2)")
    if not np.all(np.isfinite(thr)) or np.any(np.diff(thr) <= 0):
        raise DataError("thresholds must be finite and strictly ascending")
    return np.searchsorted(thr, np.asarray(values, dtype=float), side="left") + 1


def level_counts(codes: np.ndarray, levels: int) -> np.ndarray:
    """Counts of each level ``1..levels``."""
    return np.bincount(np.asarray(codes, dtype=np.intp) - 1, minlength=levels)[:levels]


def make_dataset(values, metas: Sequence[ColumnMeta]) -> Dataset:
    """Convenience constructor accepting any array-like."""
    return Dataset(np.asarray(values, dtype=float), tuple(metas))


