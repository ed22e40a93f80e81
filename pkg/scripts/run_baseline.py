"""Persistence baseline (k = 1) on the Beijing test split.

    python scripts/run_baseline.py data/PRSA_data_2010.1.1-2014.12.31.csv
"""
import argparse

from airforecast.evaluate import evaluate
from airforecast.ingest import load_table
from airforecast.models import ModelSpec, build_model
from airforecast.pipeline import build_windows, chrono_split, fit_minmax, scale


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv")
    parser.add_argument("--window", type=int, default=24)
    parser.add_argument("--horizons", type=int, nargs="+", default=[1])
    args = parser.parse_args()

    table = load_table(args.csv)
    train, test = chrono_split(table, 0.7)
    scaler = fit_minmax(train)
    print(f"rows {len(table)}  dropped {table.dropped_count}  gaps {table.gap_count}")
    for k in args.horizons:
        windows = build_windows(scale(scaler, test), args.window, k)
        model = build_model(ModelSpec("persistence"), table.n_features, args.window, k,
                            table.target_index)
        report, _ = evaluate(model, windows, scaler)
        print(f"k={k:2d}  MAE {report.mae:8.3f}  RMSE {report.rmse:8.3f}  n={report.n_samples}")


if __name__ == "__main__":
    main()
