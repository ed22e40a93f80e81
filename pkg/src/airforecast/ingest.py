"""Reading the hourly Beijing PM2.5 CSV (UCI PRSA schema) into a feature table."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import EmptyDataError, ParseError, SchemaError

HEADER = ("No", "year", "month", "day", "hour", "pm2.5", "DEWP", "TEMP", "PRES",
          "cbwd", "Iws", "Is", "Ir")
MISSING = "NA"
NUMERIC_COLUMNS = ("PM2.5", "DEWP", "TEMP", "PRES", "Iws", "Is", "Ir")
TARGET = "PM2.5"
ONE_HOT_PREFIX = "cbwd_"
CYCLICAL_COLUMNS = ("hour_sin", "hour_cos", "month_sin", "month_cos")


@dataclass(frozen=True)
class RawRecord:
    row_no: int
    year: int
    month: int
    day: int
    hour: int
    pm25: float | None
    dewp: float
    temp: float
    pres: float
    cbwd: str
    iws: float
    is_snow: float
    ir_rain: float

    @property
    def timestamp(self) -> datetime:
        return datetime(self.year, self.month, self.day, self.hour)


@dataclass(frozen=True)
class FeatureConfig:
    cyclical_time: bool = False


@dataclass
class FeatureTable:
    timestamps: list[datetime]
    features: np.ndarray
    target: np.ndarray
    column_names: list[str]
    category_levels: list[str]
    dropped_count: int = 0
    gap_count: int = 0
    target_column: str = TARGET

    def __len__(self):
        return len(self.timestamps)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def target_index(self) -> int:
        return self.column_names.index(self.target_column)

    def rows(self, start: int, stop: int) -> "FeatureTable":
        return FeatureTable(
            timestamps=self.timestamps[start:stop],
            features=self.features[start:stop].copy(),
            target=self.target[start:stop].copy(),
            column_names=list(self.column_names),
            category_levels=list(self.category_levels),
            dropped_count=self.dropped_count,
            gap_count=count_gaps(self.timestamps[start:stop]),
            target_column=self.target_column,
        )

    def with_features(self, features: np.ndarray) -> "FeatureTable":
        return FeatureTable(
            timestamps=list(self.timestamps),
            features=features,
            target=features[:, self.target_index].copy(),
            column_names=list(self.column_names),
            category_levels=list(self.category_levels),
            dropped_count=self.dropped_count,
            gap_count=self.gap_count,
            target_column=self.target_column,
        )

    def gap_mask(self) -> np.ndarray:
        """``mask[i]`` is True when row i+1 is not exactly one hour after row i."""
        ts = np.array(self.timestamps, dtype="datetime64[h]")
        return np.diff(ts) != np.timedelta64(1, "h")

    def to_csv(self, fh: IO[str]) -> None:
        """Write ``timestamp,<column_names...>`` with ISO-8601 hour timestamps."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *self.column_names])
        for ts, row in zip(self.timestamps, self.features):
            writer.writerow([ts.strftime("%Y-%m-%dT%H:00"), *(repr(float(v)) for v in row)])


def count_gaps(timestamps: Sequence[datetime]) -> int:
    one_hour = timedelta(hours=1)
    return sum(1 for a, b in zip(timestamps, timestamps[1:]) if b - a != one_hour)


def _number(token: str, column: str, row: int) -> float:
    if token == MISSING:
        raise ParseError(f"missing value in column {column!r} (only pm2.5 may be NA)", row)
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric token {token!r} in column {column!r}", row) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {token!r} in column {column!r}", row)
    return value


def _integer(token: str, column: str, row: int, lo: int, hi: int) -> int:
    value = _number(token, column, row)
    if value != int(value) or not lo <= value <= hi:
        raise ParseError(f"{column}={token!r} outside [{lo}, {hi}]", row)
    return int(value)


def parse_raw_csv(source) -> list[RawRecord]:
    """Parse a PRSA CSV from a path, text stream or byte stream.

    Row numbers in error messages count the header as line 1.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return parse_raw_csv(fh)
    if isinstance(source, io.TextIOBase):
        stream = source
    else:
        stream = io.TextIOWrapper(source, encoding="utf-8-sig", newline="")
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise SchemaError("empty file: missing header")
    header = [h.strip() for h in header]
    for i, expected in enumerate(HEADER):
        got = header[i] if i < len(header) else None
        if got != expected:
            raise SchemaError(f"header column {i + 1}: expected {expected!r}, got {got!r}")
    if len(header) != len(HEADER):
        raise SchemaError(f"header has {len(header)} columns, expected {len(HEADER)}; "
                          f"unexpected column {header[len(HEADER)]!r}")

    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(HEADER):
            raise ParseError(f"expected {len(HEADER)} fields, got {len(row)}", line_no)
        row = [t.strip() for t in row]
        pm = None if row[5] == MISSING else _number(row[5], "pm2.5", line_no)
        if pm is not None and pm < 0:
            raise ParseError(f"negative pm2.5 {row[5]!r}", line_no)
        if row[9] in ("", MISSING):
            raise ParseError("missing value in column 'cbwd'", line_no)
        records.append(RawRecord(
            row_no=_integer(row[0], "No", line_no, 1, 10**12),
            year=_integer(row[1], "year", line_no, 1, 9999),
            month=_integer(row[2], "month", line_no, 1, 12),
            day=_integer(row[3], "day", line_no, 1, 31),
            hour=_integer(row[4], "hour", line_no, 0, 23),
            pm25=pm,
            dewp=_number(row[6], "DEWP", line_no),
            temp=_number(row[7], "TEMP", line_no),
            pres=_number(row[8], "PRES", line_no),
            cbwd=row[9],
            iws=_number(row[10], "Iws", line_no),
            is_snow=_number(row[11], "Is", line_no),
            ir_rain=_number(row[12], "Ir", line_no),
        ))
    return records


def write_raw_csv(records: Iterable[RawRecord], fh: IO[str]) -> None:
    """Inverse of :func:`parse_raw_csv` (numbers written with ``repr``)."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(HEADER)

    def num(v):
        return MISSING if v is None else repr(v)

    for r in records:
        writer.writerow([r.row_no, r.year, r.month, r.day, r.hour, num(r.pm25), num(r.dewp),
                         num(r.temp), num(r.pres), r.cbwd, num(r.iws), num(r.is_snow),
                         num(r.ir_rain)])


def build_feature_table(records: Sequence[RawRecord],
                        config: FeatureConfig = FeatureConfig()) -> FeatureTable:
    """Drop rows with missing PM2.5, one-hot the wind direction and stack features.

    Columns: PM2.5, DEWP, TEMP, PRES, Iws, Is, Ir, one ``cbwd_<level>`` per
    wind level in first-appearance order, then the optional cyclical time
    columns.
    """
    kept = [r for r in records if r.pm25 is not None]
    dropped = len(records) - len(kept)
    if not kept:
        raise EmptyDataError(f"no rows left after dropping {dropped} rows with missing pm2.5")

    timestamps = []
    for r in kept:
        try:
            timestamps.append(r.timestamp)
        except ValueError as exc:
            raise ParseError(f"invalid date: {exc}", r.row_no) from None
    for prev, cur, r in zip(timestamps, timestamps[1:], kept[1:]):
        if cur <= prev:
            raise ParseError(f"timestamps not strictly increasing ({cur} after {prev})", r.row_no)

    levels: list[str] = []
    for r in kept:
        if r.cbwd not in levels:
            levels.append(r.cbwd)
    level_index = {lvl: i for i, lvl in enumerate(levels)}

    numeric = np.array([[r.pm25, r.dewp, r.temp, r.pres, r.iws, r.is_snow, r.ir_rain]
                        for r in kept], dtype=np.float64)
    onehot = np.zeros((len(kept), len(levels)))
    onehot[np.arange(len(kept)), [level_index[r.cbwd] for r in kept]] = 1.0
    blocks = [numeric, onehot]
    names = list(NUMERIC_COLUMNS) + [ONE_HOT_PREFIX + lvl for lvl in levels]
    if config.cyclical_time:
        hour = np.array([r.hour for r in kept], dtype=np.float64)
        month = np.array([r.month for r in kept], dtype=np.float64)
        blocks.append(np.column_stack([
            np.sin(2 * np.pi * hour / 24), np.cos(2 * np.pi * hour / 24),
            np.sin(2 * np.pi * (month - 1) / 12), np.cos(2 * np.pi * (month - 1) / 12),
        ]))
        names += list(CYCLICAL_COLUMNS)
    features = np.hstack(blocks)
    return FeatureTable(
        timestamps=timestamps,
        features=features,
        target=features[:, 0].copy(),
        column_names=names,
        category_levels=levels,
        dropped_count=dropped,
        gap_count=count_gaps(timestamps),
    )


def load_table(path, config: FeatureConfig = FeatureConfig()) -> FeatureTable:
    return build_feature_table(parse_raw_csv(path), config)


def series_table(values, start: datetime = datetime(2000, 1, 1), name: str = TARGET) -> FeatureTable:
    """Single-column hourly table holding just a target series (synthetic data)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return FeatureTable(
        timestamps=[start + timedelta(hours=i) for i in range(len(values))],
        features=values.copy(),
        target=values[:, 0].copy(),
        column_names=[name],
        category_levels=[],
        target_column=name,
    )
