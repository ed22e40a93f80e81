"""Chronological split, min-max scaling and sliding-window sample construction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, SchemaError, SplitError
from .ingest import FeatureTable


def chrono_split(table: FeatureTable, train_fraction: float = 0.7):
    """First floor(fraction * T) rows train, the rest test. Order is preserved."""
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(table)
    # Guard the floor against representation error (0.7 * 10 == 7.000000000000001 is fine,
    # but 0.29 * 100 == 28.999999999999996 is not).
    cut = math.floor(train_fraction * n + 1e-9)
    if cut == 0 or cut == n:
        raise SplitError(f"split of {n} rows at fraction {train_fraction} leaves an empty part")
    return table.rows(0, cut), table.rows(cut, n)


@dataclass
class Scaler:
    mins: np.ndarray
    maxs: np.ndarray
    column_names: list[str]
    target_column: str = "PM2.5"

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins

    @property
    def target_index(self) -> int:
        return self.column_names.index(self.target_column)

    @property
    def target_range(self) -> float:
        i = self.target_index
        return float(self.maxs[i] - self.mins[i])

    def _span(self) -> np.ndarray:
        return np.where(self.constant, 1.0, self.maxs - self.mins)

    def transform(self, x: np.ndarray) -> np.ndarray:
        out = (x - self.mins) / self._span()
        return np.where(self.constant, 0.0, out)

    def to_dict(self) -> dict:
        return {"mins": [float(v) for v in self.mins], "maxs": [float(v) for v in self.maxs],
                "column_names": list(self.column_names), "target_column": self.target_column}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["mins"], dtype=np.float64), np.array(d["maxs"], dtype=np.float64),
                   list(d["column_names"]), d.get("target_column", "PM2.5"))


def fit_minmax(train: FeatureTable) -> Scaler:
    if len(train) == 0:
        raise ContractError("cannot fit a scaler on an empty table")
    return Scaler(train.features.min(axis=0), train.features.max(axis=0),
                  list(train.column_names), train.target_column)


def scale(scaler: Scaler, table: FeatureTable) -> FeatureTable:
    """Apply (x - min) / (max - min) per column; constant columns map to 0.

    Values outside the training range are not clipped.
    """
    if list(table.column_names) != list(scaler.column_names):
        raise SchemaError(f"columns {table.column_names} do not match scaler "
                          f"columns {scaler.column_names}")
    return table.with_features(scaler.transform(table.features))


def unscale_target(scaler: Scaler, values) -> np.ndarray:
    i = scaler.target_index
    lo, hi = scaler.mins[i], scaler.maxs[i]
    values = np.asarray(values, dtype=np.float64)
    if hi == lo:
        return np.full_like(values, lo)
    return values * (hi - lo) + lo


@dataclass
class WindowedDataset:
    """Supervised samples cut from a (scaled) feature table.

    ``inputs[i]`` is rows ``i .. i+w-1`` (shape w x m) and ``labels[i]`` is the
    target at row ``i+w-1+k``. ``future[i]`` holds the targets at the k rows
    after the window, so ``future[i, -1] == labels[i]``; the transformer
    decoder trains on the whole path.
    """

    inputs: np.ndarray
    labels: np.ndarray
    future: np.ndarray
    window: int
    horizon: int
    label_row_index: np.ndarray
    target_index: int = 0
    label_timestamps: list = field(default_factory=list)
    source_rows: int = 0

    def __len__(self):
        return len(self.labels)

    @property
    def empty(self) -> bool:
        return len(self.labels) == 0

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]

    @property
    def target_history(self) -> np.ndarray:
        return self.inputs[:, :, self.target_index]

    def batch(self, index) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        index = np.asarray(index)
        return (np.ascontiguousarray(self.inputs[index]), self.labels[index],
                self.future[index])

    def to_csv(self, fh: IO[str]) -> None:
        """Debug dump: a ``N,w,m,k`` header line, then one line per sample holding
        the row-major w*m input block followed by the label."""
        n, w, m = len(self), self.window, self.n_features
        fh.write(f"N,w,m,k\n{n},{w},{m},{self.horizon}\n")
        for block, label in zip(self.inputs, self.labels):
            fh.write(",".join(repr(float(v)) for v in block.reshape(-1)))
            fh.write(f",{float(label)!r}\n")


def expected_count(n_rows: int, w: int, k: int) -> int:
    return max(0, n_rows - w - k + 1)


def build_windows(table: FeatureTable, w: int, k: int, strict_gaps: bool = False) -> WindowedDataset:
    """Cut every window of w rows whose label k rows after the window end exists.

    Windows run over row indices, so gaps left by dropped rows are bridged.
    With ``strict_gaps`` any window whose input rows or label row straddle a
    gap is left out. Too-short tables give an empty dataset, not an error.
    """
    if w < 1 or k < 1:
        raise ContractError(f"window and horizon must be >= 1, got w={w}, k={k}")
    feats = np.asarray(table.features, dtype=np.float64)
    target = feats[:, table.target_index]
    n_rows, m = feats.shape
    n = expected_count(n_rows, w, k)
    if n == 0:
        return WindowedDataset(
            inputs=np.zeros((0, w, m)), labels=np.zeros(0), future=np.zeros((0, k)),
            window=w, horizon=k, label_row_index=np.zeros(0, dtype=np.intp),
            target_index=table.target_index, label_timestamps=[], source_rows=n_rows)

    inputs = sliding_window_view(feats, (w, m))[:n, 0]
    future = sliding_window_view(target, k)[w:w + n]
    starts = np.arange(n)
    if strict_gaps:
        gaps = table.gap_mask().astype(np.int64)
        span = w + k - 1  # gaps between consecutive rows in [i, i+w-1+k]
        csum = np.concatenate([[0], np.cumsum(gaps)])
        keep = (csum[starts + span] - csum[starts]) == 0
        starts = starts[keep]
        inputs, future = inputs[keep], future[keep]
    label_rows = starts + w - 1 + k
    return WindowedDataset(
        inputs=inputs,
        labels=future[:, -1].copy(),
        future=future,
        window=w,
        horizon=k,
        label_row_index=label_rows,
        target_index=table.target_index,
        label_timestamps=[table.timestamps[i] for i in label_rows],
        source_rows=n_rows,
    )
