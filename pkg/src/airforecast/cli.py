"""Command-line entry point.

    airforecast ingest-check <csv> [--dump table.csv]
    airforecast run <config> [--window-days N] [--output DIR]
    airforecast grid <config> [--workers N] [--output DIR]
    airforecast eval <model-file> <csv> [--all-rows] [--output DIR]

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training divergence.
The default output directory comes from $AIRFORECAST_OUTPUT_DIR (else ./runs).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .config import OUTPUT_ENV, GridSpec, load_config
from .errors import ContractError, DataError, ForecastError
from .evaluate import RESULTS_HEADER, evaluate
from .experiment import run_experiment, run_grid
from .ingest import FeatureConfig, build_feature_table, parse_raw_csv
from .models import TrainedModel
from .pipeline import build_windows, chrono_split, scale

log = logging.getLogger("airforecast")


def cmd_ingest_check(args) -> int:
    try:
        records = parse_raw_csv(args.csv)
    except OSError as exc:
        raise DataError(f"cannot read {args.csv}: {exc}") from None
    table = build_feature_table(records, FeatureConfig(cyclical_time=args.cyclical_time))
    missing = sum(r.pm25 is None for r in records)
    print(f"records:        {len(records)}")
    print(f"missing pm2.5:  {missing}")
    print(f"dropped rows:   {table.dropped_count}")
    print(f"table rows:     {len(table)}")
    print(f"time gaps:      {table.gap_count}")
    print(f"wind levels:    {', '.join(table.category_levels)}")
    print(f"feature count:  {table.n_features}")
    print(f"columns:        {', '.join(table.column_names)}")
    if len(table):
        print(f"span:           {table.timestamps[0]} .. {table.timestamps[-1]}")
    if args.dump:
        with open(args.dump, "w", encoding="utf-8", newline="") as fh:
            table.to_csv(fh)
        print(f"wrote {args.dump}")
    return 0


def _overrides(config, args):
    if getattr(args, "window_days", None) is not None:
        config = replace(config, w=int(round(args.window_days * 24)))
    if getattr(args, "output", None):
        config = replace(config, output_dir=args.output)
    return config


def cmd_run(args) -> int:
    config = _overrides(load_config(args.config), args)
    result = run_experiment(config)
    r = result.report
    print(",".join(RESULTS_HEADER))
    print(",".join(str(v) for v in r.row()))
    counts = result.manifest.get("counts", {})
    print(f"dropped rows: {counts.get('dropped_rows')}  "
          f"windows: train={counts.get('train_windows')} test={counts.get('test_windows')}")
    print(f"artifacts in {result.output_dir}")
    return 0


def cmd_grid(args) -> int:
    config = _overrides(load_config(args.config), args)
    grid = config.grid or GridSpec()
    if args.workers:
        grid = replace(grid, workers=args.workers)
    path = run_grid(config, grid)
    print(path.read_text(encoding="utf-8"), end="")
    print(f"results in {path}")
    return 0


def cmd_eval(args) -> int:
    model = TrainedModel.load(args.model)
    if model.scaler is None:
        raise ContractError("model file carries no scaler")
    exp = model.metadata.get("experiment", {})
    data = exp.get("data", {})
    fraction = exp.get("split", {}).get("train_fraction", 0.7)
    try:
        records = parse_raw_csv(args.csv)
    except OSError as exc:
        raise DataError(f"cannot read {args.csv}: {exc}") from None
    table = build_feature_table(records, FeatureConfig(cyclical_time=data.get("cyclical_time", False)))
    if not args.all_rows:
        # reproduce the experiment's own test split
        row_fraction = data.get("row_fraction", 1.0)
        if row_fraction < 1.0:
            table = table.rows(0, max(1, math.floor(row_fraction * len(table) + 1e-9)))
        _, table = chrono_split(table, fraction)
    windows = build_windows(scale(model.scaler, table), model.window, model.horizon,
                            data.get("strict_gaps", False))
    if windows.empty:
        raise DataError("not enough rows to form a single evaluation window")
    report, series = evaluate(model, windows)
    print(",".join(RESULTS_HEADER))
    print(",".join(str(v) for v in report.row()))
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
            series.to_csv(fh)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airforecast", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="validate a PRSA CSV and report dropped rows")
    p.add_argument("csv")
    p.add_argument("--cyclical-time", action="store_true")
    p.add_argument("--dump", help="write the encoded feature table to this CSV")
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("run", help="run one experiment from a config or manifest")
    p.add_argument("config")
    p.add_argument("--window-days", type=float, help="look-back window in days (x24 hours)")
    p.add_argument("--output", help=f"output directory (default: [output] dir or ${OUTPUT_ENV})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="run a (model x w x k) grid")
    p.add_argument("config")
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="score a saved model on a PRSA CSV")
    p.add_argument("model")
    p.add_argument("csv")
    p.add_argument("--all-rows", action="store_true",
                   help="evaluate on the whole file instead of its test split")
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ForecastError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"[{stage}] " if stage else ""
        print(f"error: {prefix}{exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
