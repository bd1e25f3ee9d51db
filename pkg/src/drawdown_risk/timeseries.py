"""Daily time-series ingestion, calendar alignment and percentage changes."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError, DuplicateDateError, ParseError

CATEGORIES = ("equity_index", "bond", "currency", "futures", "volatility", "macro")


@dataclass(frozen=True)
class TimeSeriesFrame:
    dates: tuple[date, ...]
    series: Mapping[str, np.ndarray]
    categories: Mapping[str, str]

    def __post_init__(self):
        dates = tuple(self.dates)
        for a, b in zip(dates, dates[1:]):
            if not a < b:
                raise ValueError(f"dates not strictly increasing at {b.isoformat()}")
        series = {}
        for name, values in self.series.items():
            arr = np.array(values, dtype=float)
            arr.setflags(write=False)
            if arr.shape != (len(dates),):
                raise ValueError(f"series {name!r} has length {arr.size}, expected {len(dates)}")
            series[name] = arr
        if set(self.categories) != set(series):
            raise ValueError("every series needs exactly one category tag")
        for name, tag in self.categories.items():
            if tag not in CATEGORIES:
                raise ValueError(f"unknown category {tag!r} for series {name!r}")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "categories", dict(self.categories))

    def __len__(self):
        return len(self.dates)

    @property
    def names(self) -> list[str]:
        return list(self.series)

    def matrix(self, names: Iterable[str] | None = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        if not names:
            return np.empty((len(self.dates), 0))
        return np.column_stack([self.series[n] for n in names])

    def is_dense(self) -> bool:
        return all(np.isfinite(v).all() for v in self.series.values())


@dataclass(frozen=True)
class AlignmentPolicy:
    join: str = "intersection"
    fill: str = "forward_fill"
    max_fill_gap: int = 5

    def __post_init__(self):
        if self.join not in ("intersection", "union"):
            raise ValueError(f"join must be 'intersection' or 'union', got {self.join!r}")
        if self.fill not in ("forward_fill", "drop_row"):
            raise ValueError(f"fill must be 'forward_fill' or 'drop_row', got {self.fill!r}")
        if self.max_fill_gap < 0:
            raise ValueError("max_fill_gap must be >= 0")


def _parse_value(text, line):
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse value {text!r}", line) from None


def ingest_csv(source, name: str, category: str) -> TimeSeriesFrame:
    """Read a ``date,value`` CSV with a header row into a one-series frame.

    ``source`` may be bytes, a text/binary file object, or a path. Empty value
    cells are read as missing (NaN) and left for :func:`align` to handle.
    """
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif hasattr(source, "read"):
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header row", 1) from None
    if len(header) != 2:
        raise ParseError(f"expected 2 header columns, got {len(header)}", 1)

    rows = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns, got {len(row)}", lineno)
        try:
            d = date.fromisoformat(row[0].strip())
        except ValueError:
            raise ParseError(f"cannot parse date {row[0]!r}", lineno) from None
        if d in rows:
            raise DuplicateDateError(f"duplicate date {d.isoformat()} at line {lineno}")
        rows[d] = _parse_value(row[1], lineno)

    dates = sorted(rows)
    return TimeSeriesFrame(
        dates=tuple(dates),
        series={name: np.array([rows[d] for d in dates], dtype=float)},
        categories={name: category},
    )


def align(frames: list[TimeSeriesFrame], policy: AlignmentPolicy | None = None) -> TimeSeriesFrame:
    """Merge frames onto one dense calendar.

    Under ``forward_fill`` a missing cell takes the last observed value of its
    series as long as no more than ``max_fill_gap`` consecutive calendar rows
    have been filled; rows that still have a hole are dropped.
    """
    policy = policy or AlignmentPolicy()
    if not frames:
        raise ValueError("align needs at least one frame")
    seen = set()
    for f in frames:
        for n in f.series:
            if n in seen:
                raise ValueError(f"duplicate series name {n!r} across frames")
            seen.add(n)

    if policy.join == "intersection":
        common = set(frames[0].dates)
        for f in frames[1:]:
            common &= set(f.dates)
        calendar = sorted(common)
        if not calendar and any(len(f) for f in frames):
            raise ValueError("no overlapping dates under intersection join")
    else:
        calendar = sorted(set().union(*(f.dates for f in frames)))

    columns = {}
    categories = {}
    for f in frames:
        pos = {d: i for i, d in enumerate(f.dates)}
        for n, values in f.series.items():
            col = np.full(len(calendar), np.nan)
            for i, d in enumerate(calendar):
                j = pos.get(d)
                if j is not None:
                    col[i] = values[j]
            if policy.fill == "forward_fill":
                col = _forward_fill(col, policy.max_fill_gap)
            columns[n] = col
            categories[n] = f.categories[n]

    keep = np.ones(len(calendar), dtype=bool)
    for col in columns.values():
        keep &= np.isfinite(col)
    dates = tuple(d for d, k in zip(calendar, keep) if k)
    return TimeSeriesFrame(
        dates=dates,
        series={n: col[keep] for n, col in columns.items()},
        categories=categories,
    )


def _forward_fill(col, max_gap):
    out = col.copy()
    last = math.nan
    gap = 0
    for i, v in enumerate(col):
        if np.isfinite(v):
            last = v
            gap = 0
        else:
            gap += 1
            if np.isfinite(last) and gap <= max_gap:
                out[i] = last
    return out


def pct_change(values, horizon: int = 1) -> np.ndarray:
    """``out[i] = values[i + horizon] / values[i] - 1``; output is ``horizon`` shorter."""
    values = np.asarray(values, dtype=float)
    if horizon < 1:
        raise ValueError("horizon must be a positive integer")
    if horizon >= values.size:
        raise ValueError(f"horizon {horizon} must be smaller than series length {values.size}")
    denom = values[:-horizon]
    zero = np.flatnonzero(denom == 0)
    if zero.size:
        raise DomainError(f"zero denominator at index {int(zero[0])}")
    return values[horizon:] / denom - 1.0


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
