"""CSV ingestion, stationarity transforms and monthly-to-quarterly aggregation."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data; ``row``/``column`` locate the problem when known."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
        self.row = row
        self.column = column


class Transform(str, enum.Enum):
    NONE = "none"
    DIFF = "diff"
    DIFF_LOG_400 = "diff_log_400"


class Frequency(str, enum.Enum):
    MONTHLY = "monthly"
    QUARTERLY = "quarterly"


@dataclass(frozen=True)
class Series:
    name: str
    values: np.ndarray
    frequency: Frequency = Frequency.QUARTERLY

    def __len__(self) -> int:
        return len(self.values)


def ingest_csv(
    path,
    columns: Optional[Sequence[str]] = None,
    frequency: Frequency = Frequency.QUARTERLY,
    index_column: Optional[str] = "date",
) -> Dict[str, Series]:
    """Read a header-first CSV into named series.

    ``columns`` lists the series required (all numeric columns when None);
    ``index_column`` is skipped if present. Rows are numbered from 1 for
    the header.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header", row=1)
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    wanted = [h for h in header if h != index_column] if columns is None else list(columns)
    for name in wanted:
        if name not in header:
            raise DataError(f"{path}: missing column", column=name)
    idx = {name: header.index(name) for name in wanted}
    out = {name: np.empty(len(body)) for name in wanted}
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: expected {len(header)} fields, found {len(row)}", row=i)
        for name, j in idx.items():
            cell = row[j].strip()
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r}", row=i, column=name) from None
            if not math.isfinite(value):
                raise DataError(f"{path}: non-finite value {cell!r}", row=i, column=name)
            out[name][i - 2] = value
    return {name: Series(name, values, Frequency(frequency)) for name, values in out.items()}


def transform_series(values, kind) -> np.ndarray:
    """Apply ``none``, ``diff`` (first differences) or ``diff_log_400`` (400 x log growth)."""
    kind = Transform(kind)
    y = np.asarray(values, dtype=float)
    if kind is Transform.NONE:
        return y.copy()
    if len(y) < 2:
        raise DataError("differencing needs at least two observations")
    if kind is Transform.DIFF:
        return np.diff(y)
    if np.any(y <= 0):
        raise DataError("diff_log_400 needs strictly positive values")
    return 400.0 * np.diff(np.log(y))


def monthly_to_quarterly(values) -> np.ndarray:
    """Within-quarter means of consecutive month triples; a trailing partial quarter is dropped."""
    y = np.asarray(values, dtype=float)
    if len(y) < 3:
        raise DataError("need at least three monthly observations")
    full = len(y) // 3
    if len(y) % 3:
        warnings.warn(
            f"dropping {len(y) % 3} trailing month(s) that do not complete a quarter", RuntimeWarning
        )
    return y[: 3 * full].reshape(full, 3).mean(axis=1)


def align_series(series: Sequence[np.ndarray]) -> np.ndarray:
    """Stack series as columns, trimming from the start so they end together."""
    if not series:
        raise DataError("no series selected")
    length = min(len(s) for s in series)
    if length == 0:
        raise DataError("a series is empty after transformation")
    return np.column_stack([np.asarray(s, dtype=float)[len(s) - length :] for s in series])
