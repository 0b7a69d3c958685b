"""Reading and writing ``date,value`` CSV files."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .model import TimeSeries
from .timebase import parse_date


def load_csv(path, name: str | None = None, is_forecast: bool = False) -> TimeSeries:
    """Load a series; rows may come in any order, duplicate dates are rejected."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    rows = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if [h.strip().lower() for h in header[:2]] != ["date", "value"]:
            raise DataError(f"{path}:1: expected header 'date,value', got {','.join(header)!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{line}: expected 2 fields, got {len(row)}")
            try:
                day = parse_date(row[0])
            except ParseError as exc:
                raise ParseError(f"{path}:{line}: {exc}") from None
            try:
                value = float(row[1])
            except ValueError:
                raise DataError(f"{path}:{line}: value {row[1]!r} is not a number") from None
            if not math.isfinite(value):
                raise DataError(f"{path}:{line}: value {row[1]!r} is not finite")
            if day in rows:
                raise DataError(
                    f"{path}:{line}: duplicate date {day.isoformat()} (first seen on line {rows[day][1]})"
                )
            rows[day] = (value, line)
    dates = sorted(rows)
    values = np.array([rows[d][0] for d in dates])
    return TimeSeries(name or path.stem, tuple(dates), values, is_forecast)


def write_csv(series: TimeSeries, path) -> None:
    """Write ``date,value`` rows; ``repr`` keeps every float bit-exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "value"])
        for d, v in zip(series.dates, series.values):
            writer.writerow([d.isoformat(), repr(float(v))])
