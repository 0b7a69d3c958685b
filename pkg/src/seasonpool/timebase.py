"""Calendar arithmetic, seasonal pooling indices and scaled time axes.

Civil dates are plain :class:`datetime.date` values (proleptic Gregorian, no
time zones). Pooling indices and time offsets are computed from the actual
dates, so series with gaps are fine.
"""

from __future__ import annotations

import calendar
import enum
import re
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ParseError

CalendarDate = date

_ISO_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")


class SeasonalityKind(enum.Enum):
    """A seasonality dimension; the value is its command-line name."""

    DAY_OF_WEEK = "week"
    DAY_OF_MONTH = "month"

    @property
    def cardinality(self) -> int:
        return 7 if self is SeasonalityKind.DAY_OF_WEEK else 31

    @classmethod
    def parse(cls, name: str) -> "SeasonalityKind":
        aliases = {
            "week": cls.DAY_OF_WEEK,
            "dow": cls.DAY_OF_WEEK,
            "dayofweek": cls.DAY_OF_WEEK,
            "month": cls.DAY_OF_MONTH,
            "dom": cls.DAY_OF_MONTH,
            "dayofmonth": cls.DAY_OF_MONTH,
        }
        key = name.strip().lower().replace("_", "").replace("-", "")
        try:
            return aliases[key]
        except KeyError:
            raise ConfigurationError(f"unknown seasonality {name!r}") from None


@dataclass(frozen=True)
class PoolingAssignment:
    """Per-observation subcategory indices, one column per seasonality."""

    indices: np.ndarray
    dims: tuple[SeasonalityKind, ...]

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != len(self.dims):
            raise ConfigurationError(
                f"indices of shape {idx.shape} do not match {len(self.dims)} dims"
            )
        for d, kind in enumerate(self.dims):
            col = idx[:, d]
            if col.size and (col.min() < 0 or col.max() >= kind.cardinality):
                raise DomainError(f"column {d} has indices outside [0, {kind.cardinality})")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "dims", tuple(self.dims))

    def __len__(self) -> int:
        return self.indices.shape[0]

    def column(self, dim: SeasonalityKind) -> np.ndarray:
        return self.indices[:, self.dims.index(dim)]

    def take(self, rows) -> "PoolingAssignment":
        return PoolingAssignment(self.indices[rows], self.dims)


@dataclass(frozen=True)
class TimeScale:
    """Maps dates onto a real axis: ``(date - origin) / span_days``."""

    origin: date
    span_days: int

    def __post_init__(self):
        if int(self.span_days) < 1:
            raise DomainError(f"span_days must be >= 1, got {self.span_days}")

    @classmethod
    def covering(cls, dates: Sequence[date]) -> "TimeScale":
        """Scale sending the first date to 0 and the last to 1."""
        return cls(dates[0], max(1, (dates[-1] - dates[0]).days))


def parse_date(text: str) -> date:
    """Parse a ``YYYY-MM-DD`` string, naming the bad field on failure."""
    match = _ISO_DATE.match(text.strip()) if isinstance(text, str) else None
    if match is None:
        raise ParseError(f"date {text!r} is not of the form YYYY-MM-DD")
    year, month, day = (int(g) for g in match.groups())
    if year < 1:
        raise ParseError(f"invalid year {year} in {text!r}")
    if not 1 <= month <= 12:
        raise ParseError(f"invalid month {month} in {text!r}")
    last = calendar.monthrange(year, month)[1]
    if not 1 <= day <= last:
        raise ParseError(f"invalid day {day} in {text!r} (month has {last} days)")
    return date(year, month, day)


def format_date(d: date) -> str:
    return d.isoformat()


def day_of_week(d: date) -> int:
    """Monday is 0, Sunday is 6."""
    return d.weekday()


def day_of_month(d: date) -> int:
    return d.day - 1


def date_range(start: date, end: date) -> list[date]:
    """All dates from ``start`` to ``end`` inclusive."""
    n = (end - start).days + 1
    return [start + timedelta(days=i) for i in range(max(n, 0))]


_INDEXERS = {
    SeasonalityKind.DAY_OF_WEEK: day_of_week,
    SeasonalityKind.DAY_OF_MONTH: day_of_month,
}


def build_pooling(dates: Sequence[date], dims: Sequence[SeasonalityKind]) -> PoolingAssignment:
    if len(dates) == 0:
        raise ConfigurationError("cannot build pooling indices for an empty date list")
    if len(dims) == 0:
        raise ConfigurationError("at least one seasonality dimension is required")
    if len(set(dims)) != len(dims):
        raise ConfigurationError(f"duplicate seasonality in {[d.value for d in dims]}")
    indices = np.empty((len(dates), len(dims)), dtype=np.int64)
    for j, kind in enumerate(dims):
        fn = _INDEXERS[kind]
        indices[:, j] = [fn(d) for d in dates]
    return PoolingAssignment(indices, tuple(dims))


def day_offsets(dates: Sequence[date], origin: date) -> np.ndarray:
    """Whole days elapsed since ``origin`` (may be negative)."""
    ordinal0 = origin.toordinal()
    return np.array([d.toordinal() - ordinal0 for d in dates], dtype=float)


def scaled_time(dates: Sequence[date], scale: TimeScale) -> np.ndarray:
    offsets = day_offsets(dates, scale.origin)
    if offsets.size and offsets.min() < 0:
        bad = dates[int(np.argmin(offsets))]
        raise DomainError(f"date {bad.isoformat()} precedes time origin {scale.origin.isoformat()}")
    return offsets / float(scale.span_days)
