"""MAE / RMSE on de-scaled predictions and prediction-series export."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from datetime import datetime
from typing import IO

import numpy as np

from .errors import ContractError
from .models import Forecaster, TrainedModel
from .pipeline import Scaler, WindowedDataset, unscale_target

RESULTS_HEADER = ("model", "w_hours", "k_hours", "mae", "rmse", "n_samples", "seed", "config_hash")


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if a.size != p.size:
        raise ContractError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise ContractError("metrics need at least one sample")
    return a, p


def mae(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.mean(np.abs(a - p)))


def rmse(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.sqrt(np.mean((a - p) ** 2)))


@dataclass
class MetricsReport:
    model: str
    w: int
    k: int
    mae: float
    rmse: float
    n_samples: int
    seed: int = 0
    config_hash: str = ""

    def row(self) -> list:
        return [self.model, self.w, self.k, repr(self.mae), repr(self.rmse), self.n_samples,
                self.seed, self.config_hash]


def append_results(path, reports) -> None:
    """Append rows to a results CSV, writing the header if the file is new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(RESULTS_HEADER)
        for r in reports:
            writer.writerow(r.row())


@dataclass
class PredictionSeries:
    timestamps: list
    actual: np.ndarray
    predicted: np.ndarray

    @property
    def error(self) -> np.ndarray:
        return self.actual - self.predicted

    def between(self, start: datetime | None = None, end: datetime | None = None) -> "PredictionSeries":
        """Inclusive timestamp filter (e.g. the 2013-07-04 09:00 to 2013-07-19 08:00 plot range)."""
        keep = [i for i, ts in enumerate(self.timestamps)
                if (start is None or ts >= start) and (end is None or ts <= end)]
        return PredictionSeries([self.timestamps[i] for i in keep], self.actual[keep],
                                self.predicted[keep])

    def to_csv(self, fh: IO[str]) -> None:
        fh.write("timestamp,actual,predicted,error\n")
        for ts, a, p, e in zip(self.timestamps, self.actual, self.predicted, self.error):
            stamp = ts.strftime("%Y-%m-%dT%H:00") if isinstance(ts, datetime) else str(ts)
            fh.write(f"{stamp},{float(a)!r},{float(p)!r},{float(e)!r}\n")


def evaluate(model, test: WindowedDataset, scaler: Scaler | None = None, seed: int = 0,
             config_hash: str = "") -> tuple[MetricsReport, PredictionSeries]:
    """Predict every test window, de-scale, and score in original units.

    ``model`` may be a :class:`TrainedModel` (its own scaler is used when
    ``scaler`` is omitted) or a bare :class:`Forecaster`. The transformer
    decodes autoregressively here.
    """
    if isinstance(model, TrainedModel):
        scaler = scaler if scaler is not None else model.scaler
        model = model.forecaster()
    if not isinstance(model, Forecaster):
        raise ContractError(f"cannot evaluate {type(model).__name__}")
    if (model.window, model.horizon) != (test.window, test.horizon):
        raise ContractError(f"model expects (w={model.window}, k={model.horizon}) but test "
                            f"windows are (w={test.window}, k={test.horizon})")
    if len(test) == 0:
        raise ContractError("no test windows to evaluate")
    predicted = model.predict(test.inputs)
    actual = np.asarray(test.labels, dtype=np.float64)
    if scaler is not None:
        predicted = unscale_target(scaler, predicted)
        actual = unscale_target(scaler, actual)
    report = MetricsReport(model.kind, test.window, test.horizon, mae(actual, predicted),
                           rmse(actual, predicted), len(test), seed, config_hash)
    stamps = list(test.label_timestamps) or list(test.label_row_index)
    return report, PredictionSeries(stamps, actual, predicted)
