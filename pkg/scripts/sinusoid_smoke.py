"""Train every model on a noiseless sinusoid and compare with persistence.

    python scripts/sinusoid_smoke.py --models gru transformer
"""
import argparse
import time

import numpy as np

from airforecast.evaluate import evaluate
from airforecast.ingest import series_table
from airforecast.models import ModelSpec, build_model
from airforecast.pipeline import build_windows, chrono_split, fit_minmax, scale
from airforecast.train import TrainConfig, fit

# (epochs, batch size) per model
SETTINGS = {"rnn": (30, 32), "lstm": (30, 32), "gru": (30, 32), "transformer": (10, 128)}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--models", nargs="+", default=list(SETTINGS))
    parser.add_argument("--period", type=int, default=48)
    parser.add_argument("--length", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    t = np.arange(args.length)
    table = series_table(np.sin(2 * np.pi * t / args.period))
    train_tab, test_tab = chrono_split(table, 0.7)
    scaler = fit_minmax(train_tab)
    train = build_windows(scale(scaler, train_tab), 24, 1)
    test = build_windows(scale(scaler, test_tab), 24, 1)
    base, _ = evaluate(build_model(ModelSpec("persistence"), 1, 24, 1), test, scaler)
    print(f"persistence  MAE {base.mae:.4f}")
    for kind in args.models:
        epochs, batch = SETTINGS[kind]
        start = time.perf_counter()
        trained, curves = fit(ModelSpec(kind), train, test,
                              TrainConfig(epochs=epochs, learning_rate=1e-3, batch_size=batch,
                                          seed=args.seed), scaler)
        report, _ = evaluate(trained, test)
        print(f"{kind:12s} MAE {report.mae:.4f}  ratio {report.mae / base.mae:.3f}  "
              f"final test MSE {curves.test_mse[-1]:.2e}  {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
