"""End-to-end experiment orchestration: single runs and (model, w, k) grids."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig, GridSpec, derive_seed, parse_timestamp
from .errors import ContractError, DataError, ForecastError
from .evaluate import RESULTS_HEADER, MetricsReport, PredictionSeries, append_results, evaluate
from .ingest import FeatureTable, build_feature_table, parse_raw_csv
from .pipeline import (Scaler, WindowedDataset, build_windows, chrono_split, expected_count,
                       fit_minmax, scale)
from .train import LossCurves, fit

log = logging.getLogger(__name__)

STRATEGY = "direct: one model trained per (w, k) cell, predicting y[t+k] from the window"


@dataclass
class PreparedData:
    table: FeatureTable
    scaler: Scaler
    train: WindowedDataset
    test: WindowedDataset
    raw_rows: int
    train_rows: int
    test_rows: int


@dataclass
class ExperimentResult:
    report: MetricsReport
    series: PredictionSeries
    curves: LossCurves
    manifest: dict
    output_dir: Path


@contextmanager
def _stage(name):
    """Tag package errors raised inside the block with the pipeline stage."""
    try:
        yield
    except ForecastError as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


def load_rows(config: ExperimentConfig) -> tuple[FeatureTable, int]:
    with _stage("ingest"):
        try:
            records = parse_raw_csv(config.data_path)
        except OSError as exc:
            raise DataError(f"cannot read data file {config.data_path}: {exc}") from None
        table = build_feature_table(records, config.features)
        if config.row_fraction < 1.0:
            table = table.rows(0, max(1, math.floor(config.row_fraction * len(table) + 1e-9)))
    return table, len(records)


def prepare(config: ExperimentConfig, table: FeatureTable | None = None,
            raw_rows: int | None = None) -> PreparedData:
    """Split, scale and window the data for one (w, k) cell."""
    if table is None:
        table, raw_rows = load_rows(config)
    with _stage("split"):
        train_tab, test_tab = chrono_split(table, config.train_fraction)
    with _stage("scale"):
        scaler = fit_minmax(table if config.scaler_scope == "full" else train_tab)
        train_tab, test_tab = scale(scaler, train_tab), scale(scaler, test_tab)
    with _stage("window"):
        train = build_windows(train_tab, config.w, config.k, config.strict_gaps)
        test = build_windows(test_tab, config.w, config.k, config.strict_gaps)
    return PreparedData(table, scaler, train, test, raw_rows if raw_rows is not None else len(table),
                        len(train_tab), len(test_tab))


def _model_metadata(config: ExperimentConfig) -> dict:
    # where the run was written is not a property of the model
    d = config.to_dict()
    d.pop("output")
    d.pop("grid", None)
    return d


def _write_text(path: Path, writer) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer(fh)


def run_experiment(config: ExperimentConfig, table: FeatureTable | None = None,
                   raw_rows: int | None = None) -> ExperimentResult:
    """ingest -> split -> scale -> window -> fit -> evaluate, then write artifacts.

    Artifacts in ``config.output_dir``: metrics.csv, predictions.csv
    (plus predictions_range.csv when a series range is set), loss_curves.csv,
    model.json and manifest.json. On failure the manifest is still written,
    with ``status = "partial"`` and the failing stage.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.fingerprint(),
        "seed": config.train.seed,
        "strategy": STRATEGY,
        "status": "partial",
        "stages_completed": [],
        "artifacts": [],
    }
    try:
        data = prepare(config, table, raw_rows)
        manifest["stages_completed"] += ["ingest", "split", "scale"]
        manifest["counts"] = {
            "raw_rows": data.raw_rows,
            "dropped_rows": data.table.dropped_count,
            "table_rows": len(data.table),
            "gaps": data.table.gap_count,
            "n_features": data.table.n_features,
            "train_rows": data.train_rows,
            "test_rows": data.test_rows,
            "train_windows": len(data.train),
            "test_windows": len(data.test),
            "unsplit_windows": expected_count(len(data.table), config.w, config.k),
        }
        manifest["feature_columns"] = list(data.table.column_names)
        with _stage("window"):
            for part, ds in (("training", data.train), ("test", data.test)):
                if ds.empty:
                    raise DataError(f"no {part} windows for w={config.w}, k={config.k} "
                                    f"({ds.source_rows} {part} rows)")
        manifest["stages_completed"].append("window")
        with _stage("fit"):
            trained, curves = fit(config.model, data.train, data.test, config.train,
                                  scaler=data.scaler, feature_columns=data.table.column_names,
                                  metadata={"experiment": _model_metadata(config)})
        manifest["stages_completed"].append("fit")
        with _stage("evaluate"):
            report, series = evaluate(trained, data.test, seed=config.train.seed,
                                      config_hash=manifest["config_hash"])
        manifest["stages_completed"].append("evaluate")

        with _stage("write"):
            metrics_path = out / "metrics.csv"
            if metrics_path.exists():
                metrics_path.unlink()
            append_results(metrics_path, [report])
            _write_text(out / "predictions.csv", series.to_csv)
            artifacts = ["metrics.csv", "predictions.csv"]
            if config.series_start or config.series_end:
                sub = series.between(
                    parse_timestamp(config.series_start) if config.series_start else None,
                    parse_timestamp(config.series_end) if config.series_end else None)
                _write_text(out / "predictions_range.csv", sub.to_csv)
                artifacts.append("predictions_range.csv")
            _write_text(out / "loss_curves.csv", curves.to_csv)
            trained.save(out / "model.json")
            artifacts += ["loss_curves.csv", "model.json"]
        manifest["artifacts"] = artifacts
        manifest["metrics"] = {"mae": report.mae, "rmse": report.rmse, "n_samples": report.n_samples}
        manifest["status"] = "complete"
        return ExperimentResult(report, series, curves, manifest, out)
    except ForecastError as exc:
        manifest["failed_stage"] = getattr(exc, "stage", "unknown")
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["artifacts"] = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
        raise
    finally:
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


GRID_HEADER = RESULTS_HEADER + ("status",)


def _run_cell(args):
    cell_config, table, raw_rows = args
    try:
        result = run_experiment(cell_config, table, raw_rows)
        return result.report, "ok"
    except ForecastError as exc:
        stage = getattr(exc, "stage", "unknown")
        report = MetricsReport(cell_config.model.kind, cell_config.w, cell_config.k,
                               float("nan"), float("nan"), 0, cell_config.train.seed,
                               cell_config.fingerprint())
        return report, f"failed ({stage}): {exc}".replace("\n", " ")


def run_grid(config: ExperimentConfig, grid: GridSpec | None = None,
             output_dir: str | None = None) -> Path:
    """Run every (model, w, k) cell as its own experiment and aggregate results.

    Writes ``results.csv`` (one row per cell, in model x w x k order, with a
    status column) and pivoted views ``by_k_w<w>.csv`` and ``by_w_k<k>.csv``
    whose ``best_mae``/``best_rmse`` columns name the per-row minimum.
    A failing cell is recorded and the grid carries on.
    """
    grid = grid or config.grid or GridSpec()
    if not (grid.models and grid.windows and grid.horizons):
        raise ContractError("grid axes must be non-empty")
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, raw_rows = load_rows(config)

    jobs = []
    for kind in grid.models:
        for w in grid.windows:
            for k in grid.horizons:
                seed = derive_seed(config.train.seed, kind, w, k)
                cell = config.with_cell(kind, w, k, seed, str(out / "cells" / f"{kind}_w{w}_k{k}"))
                jobs.append((cell, table, raw_rows))
    if grid.workers > 1:
        with ProcessPoolExecutor(max_workers=grid.workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]

    results_path = out / "results.csv"
    with open(results_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_HEADER)
        for report, status in results:
            writer.writerow(report.row() + [status])
    reports = [r for r, _ in results]
    for w in grid.windows:
        _write_pivot(out / f"by_k_w{w}.csv", "k_hours", grid.horizons, grid.models,
                     {(r.model, r.k): r for r in reports if r.w == w})
    for k in grid.horizons:
        _write_pivot(out / f"by_w_k{k}.csv", "w_hours", grid.windows, grid.models,
                     {(r.model, r.w): r for r in reports if r.k == k})
    return results_path


def best_model(values: dict[str, float]) -> str:
    """Name of the model with the smallest finite value ('' if none)."""
    finite = {m: v for m, v in values.items() if not math.isnan(v)}
    return min(finite, key=finite.get) if finite else ""


def pivot_rows(row_values, models, cells) -> list[list]:
    rows = []
    for value in row_values:
        row = [value]
        maes, rmses = {}, {}
        for m in models:
            r = cells.get((m, value))
            maes[m] = r.mae if r else float("nan")
            rmses[m] = r.rmse if r else float("nan")
            row += [repr(maes[m]), repr(rmses[m])]
        rows.append(row + [best_model(maes), best_model(rmses)])
    return rows


def _write_pivot(path: Path, row_label: str, row_values, models, cells) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [row_label]
        for m in models:
            header += [f"{m}_mae", f"{m}_rmse"]
        writer.writerow(header + ["best_mae", "best_rmse"])
        writer.writerows(pivot_rows(row_values, models, cells))
