"""Typed columnar datasets loaded from CSV, plus time-series bookkeeping.

Columns are numeric, factor, ordered factor, or boolean.  Factor levels are
ordered by first appearance unless a schema override supplies an explicit
order (which marks the column as an ordered factor).  A boolean column can
flag the first row of each independent time series; :func:`build_series_index`
turns those flags into the per-series index used by the AR(1) machinery.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

NUMERIC = "numeric"
FACTOR = "factor"
ORDERED_FACTOR = "ordered_factor"
BOOLEAN = "boolean"

KINDS = (NUMERIC, FACTOR, ORDERED_FACTOR, BOOLEAN)

_TRUE_TOKENS = {"true", "TRUE", "True"}
_FALSE_TOKENS = {"false", "FALSE", "False"}


@dataclass
class Column:
    """A single typed column. Factor kinds store integer codes into `levels`."""

    name: str
    kind: str
    values: np.ndarray
    levels: list[str] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind in (FACTOR, ORDERED_FACTOR):
            if self.levels is None:
                raise DataError(f"factor column {self.name!r} needs levels")
            codes = np.asarray(self.values)
            if codes.size and (codes.min() < 0 or codes.max() >= len(self.levels)):
                raise DataError(f"factor column {self.name!r} has out-of-range codes")

    @property
    def is_factor(self) -> bool:
        return self.kind in (FACTOR, ORDERED_FACTOR)

    def labels(self) -> np.ndarray:
        """String labels for factor columns, text form otherwise."""
        if self.is_factor:
            return np.asarray(self.levels, dtype=object)[self.values]
        if self.kind == BOOLEAN:
            return np.where(self.values, "true", "false").astype(object)
        return np.asarray([format_number(v) for v in self.values], dtype=object)

    @staticmethod
    def numeric(name: str, values) -> "Column":
        arr = np.asarray(values, dtype=float)
        if arr.size and not np.all(np.isfinite(arr)):
            raise DataError(f"numeric column {name!r} contains non-finite values")
        return Column(name, NUMERIC, arr)

    @staticmethod
    def boolean(name: str, values) -> "Column":
        return Column(name, BOOLEAN, np.asarray(values, dtype=bool))

    @staticmethod
    def factor(name: str, labels, levels=None, ordered: bool = False) -> "Column":
        labels = [str(v) for v in labels]
        if levels is None:
            levels = list(dict.fromkeys(labels))
        else:
            levels = [str(v) for v in levels]
        index = {lv: i for i, lv in enumerate(levels)}
        try:
            codes = np.asarray([index[v] for v in labels], dtype=np.int64)
        except KeyError as exc:
            raise DataError(
                f"factor column {name!r}: value {exc.args[0]!r} not in declared levels"
            ) from None
        kind = ORDERED_FACTOR if ordered else FACTOR
        return Column(name, kind, codes, levels)


@dataclass
class Dataset:
    """Immutable-by-convention table of equally sized typed columns."""

    columns: dict[str, Column] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(c.values) for c in self.columns.values()}
        if len(lengths) > 1:
            raise DataError("columns have unequal lengths")

    @property
    def n_rows(self) -> int:
        for c in self.columns.values():
            return len(c.values)
        return 0

    @property
    def column_names(self) -> list[str]:
        return list(self.columns)

    def __getitem__(self, name: str) -> Column:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"no column named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @staticmethod
    def from_columns(columns: list[Column]) -> "Dataset":
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        return Dataset({c.name: c for c in columns})


@dataclass
class SeriesIndex:
    """Row-to-series mapping derived from series-start flags."""

    start_flags: np.ndarray
    series_id: np.ndarray
    series_lengths: list[int]

    @property
    def n_series(self) -> int:
        return len(self.series_lengths)

    def rows_of(self, sid: int) -> np.ndarray:
        return np.flatnonzero(self.series_id == sid)

    @staticmethod
    def single(n: int) -> "SeriesIndex":
        flags = np.zeros(n, dtype=bool)
        if n:
            flags[0] = True
        return SeriesIndex(flags, np.zeros(n, dtype=np.int64), [n] if n else [])


def format_number(v: float) -> str:
    """Shortest text that round-trips the float64 exactly."""
    return repr(float(v))


def _infer_kind(cells: list[str]) -> str:
    if all(c in _TRUE_TOKENS or c in _FALSE_TOKENS for c in cells):
        return BOOLEAN
    try:
        parsed = [float(c) for c in cells]
    except ValueError:
        return FACTOR
    if not all(math.isfinite(v) for v in parsed):
        raise DataError("numeric column contains non-finite cells")
    return NUMERIC


def _parse_numeric(name: str, cells: list[str]) -> np.ndarray:
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        try:
            out[i] = float(c)
        except ValueError:
            raise DataError(f"column {name!r}: cell {c!r} is not numeric") from None
        if not math.isfinite(out[i]):
            raise DataError(f"column {name!r}: non-finite cell {c!r}")
    return out


def _parse_boolean(name: str, cells: list[str]) -> np.ndarray:
    out = np.empty(len(cells), dtype=bool)
    for i, c in enumerate(cells):
        if c in _TRUE_TOKENS:
            out[i] = True
        elif c in _FALSE_TOKENS:
            out[i] = False
        else:
            raise DataError(f"column {name!r}: cell {c!r} is not boolean")
    return out


def load_schema(path) -> dict:
    """Read a JSON schema-override file ({column: {kind, levels, range, standardize}})."""
    with open(path, encoding="utf-8") as fh:
        try:
            schema = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"schema file {path}: {exc}") from None
    if not isinstance(schema, dict):
        raise DataError("schema override must be a JSON object")
    return schema


def load_csv(path, schema_overrides: dict | None = None) -> Dataset:
    """Load an RFC-4180 CSV with a header row into a typed Dataset.

    `schema_overrides` maps column names to any of:
      kind: one of numeric/factor/ordered_factor/boolean
      levels: explicit level order (implies ordered_factor unless kind given)
      range: [lo, hi] row filter on a numeric column
      standardize: center and scale a numeric column after filtering

    Rows with missing cells are rejected, never imputed.
    """
    schema = dict(schema_overrides or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    ncol = len(header)
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise DataError(f"{path}: ragged row {i + 2} ({len(row)} cells, expected {ncol})")
        if any(cell == "" for cell in row):
            raise DataError(f"{path}: missing cell in row {i + 2}")

    for name in schema:
        if name not in header:
            raise DataError(f"schema override names absent column {name!r}")

    cells_by_col = {name: [row[j] for row in rows] for j, name in enumerate(header)}

    kinds: dict[str, str] = {}
    for name in header:
        ov = schema.get(name, {})
        if "kind" in ov:
            if ov["kind"] not in KINDS:
                raise DataError(f"schema override for {name!r}: unknown kind {ov['kind']!r}")
            kinds[name] = ov["kind"]
        elif "levels" in ov:
            kinds[name] = ORDERED_FACTOR
        else:
            kinds[name] = _infer_kind(cells_by_col[name])

    # Range filters drop whole rows before any column is finalized.
    keep = np.ones(len(rows), dtype=bool)
    for name, ov in schema.items():
        if "range" not in ov:
            continue
        if kinds[name] != NUMERIC:
            raise DataError(f"range filter on non-numeric column {name!r}")
        lo, hi = ov["range"]
        vals = _parse_numeric(name, cells_by_col[name])
        keep &= (vals >= lo) & (vals <= hi)

    columns: list[Column] = []
    for name in header:
        cells = [c for c, k in zip(cells_by_col[name], keep) if k]
        kind = kinds[name]
        ov = schema.get(name, {})
        if kind == NUMERIC:
            vals = _parse_numeric(name, cells)
            if ov.get("standardize"):
                sd = vals.std(ddof=1) if len(vals) > 1 else 0.0
                if sd <= 0:
                    raise DataError(f"cannot standardize constant column {name!r}")
                vals = (vals - vals.mean()) / sd
            columns.append(Column(name, NUMERIC, vals))
        elif kind == BOOLEAN:
            columns.append(Column(name, BOOLEAN, _parse_boolean(name, cells)))
        else:
            levels = ov.get("levels")
            ordered = kind == ORDERED_FACTOR
            columns.append(Column.factor(name, cells, levels=levels, ordered=ordered))
    return Dataset.from_columns(columns)


def write_csv(data: Dataset, path) -> None:
    """Write a Dataset back to CSV (numeric cells round-trip exactly)."""
    names = data.column_names
    label_cols = [data[n].labels() for n in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for i in range(data.n_rows):
            writer.writerow([col[i] for col in label_cols])


def build_series_index(data: Dataset, start_col: str) -> SeriesIndex:
    """Turn a boolean new-series flag column into a SeriesIndex.

    The first row must start a series; each True flag opens a new contiguous
    series.
    """
    col = data[start_col]
    if col.kind != BOOLEAN:
        raise DataError(f"series-start column {start_col!r} must be boolean, got {col.kind}")
    flags = col.values
    if len(flags) == 0:
        raise DataError("cannot index an empty dataset")
    if not flags[0]:
        raise DataError(f"first row of {start_col!r} must be true")
    series_id = np.cumsum(flags) - 1
    lengths = np.bincount(series_id).tolist()
    return SeriesIndex(flags.copy(), series_id.astype(np.int64), lengths)
