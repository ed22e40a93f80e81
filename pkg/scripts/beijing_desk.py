"""Desk-scale GRU on the first 20% of the Beijing file, at several horizons.

    python scripts/beijing_desk.py data/PRSA_data_2010.1.1-2014.12.31.csv --horizons 1 8
"""
import argparse

from airforecast.evaluate import evaluate
from airforecast.ingest import load_table
from airforecast.models import ModelSpec, build_model
from airforecast.pipeline import build_windows, chrono_split, fit_minmax, scale
from airforecast.train import TrainConfig, fit


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv")
    parser.add_argument("--fraction", type=float, default=0.2)
    parser.add_argument("--window", type=int, default=24)
    parser.add_argument("--horizons", type=int, nargs="+", default=[1, 8])
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--hidden", type=int, default=32)
    args = parser.parse_args()

    table = load_table(args.csv)
    table = table.rows(0, int(args.fraction * len(table)))
    train_tab, test_tab = chrono_split(table, 0.7)
    scaler = fit_minmax(train_tab)
    config = TrainConfig(epochs=args.epochs, learning_rate=5e-4, batch_size=256)
    for k in args.horizons:
        train = build_windows(scale(scaler, train_tab), args.window, k)
        test = build_windows(scale(scaler, test_tab), args.window, k)
        trained, _ = fit(ModelSpec("gru", hidden_size=args.hidden), train, test, config, scaler)
        gru, _ = evaluate(trained, test)
        base, _ = evaluate(build_model(ModelSpec("persistence"), table.n_features, args.window,
                                       k, table.target_index), test, scaler)
        print(f"k={k:2d}  GRU MAE {gru.mae:.3f} RMSE {gru.rmse:.3f}  |  "
              f"persistence MAE {base.mae:.3f} RMSE {base.rmse:.3f}")


if __name__ == "__main__":
    main()
