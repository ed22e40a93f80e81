import io
import math
from datetime import datetime

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from airforecast.errors import ContractError
from airforecast.evaluate import (RESULTS_HEADER, MetricsReport, PredictionSeries, append_results,
                                  evaluate, mae, rmse)
from airforecast.ingest import series_table
from airforecast.models import ModelSpec, TrainedModel, build_model
from airforecast.pipeline import build_windows, chrono_split, fit_minmax, scale


def vectors(n):
    return arrays(np.float64, n, elements=st.floats(-1e3, 1e3))


def test_metric_examples():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0 and rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([0, 2], [1, 0]) == 1.5
    assert rmse([0, 2], [1, 0]) == pytest.approx(math.sqrt(2.5), abs=1e-15)
    assert rmse([0, 2], [1, 0]) == pytest.approx(1.58114, abs=1e-5)


def test_metric_length_errors():
    with pytest.raises(ContractError):
        mae([1.0, 2.0], [1.0])
    with pytest.raises(ContractError):
        rmse([], [])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(vectors(n), vectors(n))),
       st.floats(-1e3, 1e3), st.randoms(use_true_random=False))
def test_metric_properties(pair, c, rnd):
    a, p = pair
    m, r = mae(a, p), rmse(a, p)
    assert r >= m - 1e-12 * max(1.0, r) and m >= 0
    assert mae(p, a) == m and rmse(p, a) == r
    perm = list(range(len(a)))
    rnd.shuffle(perm)
    assert mae(a[perm], p[perm]) == pytest.approx(m, rel=1e-12, abs=1e-12)
    assert rmse(a[perm], p[perm]) == pytest.approx(r, rel=1e-12, abs=1e-12)
    assert mae(a + c, p + c) == pytest.approx(m, rel=1e-9, abs=1e-9)
    assert rmse(a + c, p + c) == pytest.approx(r, rel=1e-9, abs=1e-9)


def sine_windows(w=6, k=1):
    t = np.arange(120)
    table = series_table(50 + 40 * np.sin(2 * np.pi * t / 24))
    train, test = chrono_split(table, 0.7)
    scaler = fit_minmax(train)
    return scaler, build_windows(scale(scaler, test), w, k)


def test_persistence_on_constant_series_is_exact():
    table = series_table(np.full(30, 12.5))
    windows = build_windows(scale(fit_minmax(table), table), 4, 3)
    report, series = evaluate(build_model(ModelSpec("persistence"), 1, 4, 3), windows,
                              fit_minmax(table))
    assert report.mae == 0.0 and report.rmse == 0.0
    np.testing.assert_array_equal(series.actual, 12.5)


def test_descaled_metrics_equal_scaled_times_range():
    scaler, windows = sine_windows()
    model = build_model(ModelSpec("gru", hidden_size=3), 1, 6, 1, seed=2)
    scaled, _ = evaluate(model, windows)
    descaled, _ = evaluate(model, windows, scaler)
    assert descaled.mae == pytest.approx(scaled.mae * scaler.target_range, rel=1e-9)
    assert descaled.rmse == pytest.approx(scaled.rmse * scaler.target_range, rel=1e-9)
    assert descaled.rmse >= descaled.mae


def test_trained_model_uses_its_scaler():
    scaler, windows = sine_windows()
    model = build_model(ModelSpec("persistence"), 1, 6, 1)
    tm = TrainedModel.from_forecaster(model, scaler)
    a, _ = evaluate(tm, windows)
    b, _ = evaluate(model, windows, scaler)
    assert a.mae == b.mae and a.n_samples == len(windows)


def test_window_mismatch():
    _, windows = sine_windows(w=6, k=1)
    with pytest.raises(ContractError, match="w=5"):
        evaluate(build_model(ModelSpec("persistence"), 1, 5, 1), windows)
    with pytest.raises(ContractError):
        evaluate(build_model(ModelSpec("persistence"), 1, 6, 2), windows)


def test_series_csv_and_range():
    scaler, windows = sine_windows()
    _, series = evaluate(build_model(ModelSpec("persistence"), 1, 6, 1), windows, scaler)
    np.testing.assert_allclose(series.error, series.actual - series.predicted)
    buf = io.StringIO()
    series.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "timestamp,actual,predicted,error"
    assert lines[1].startswith(series.timestamps[0].strftime("%Y-%m-%dT%H:00") + ",")
    assert len(lines) == len(windows) + 1
    start, end = series.timestamps[3], series.timestamps[7]
    sub = series.between(start, end)
    assert sub.timestamps == series.timestamps[3:8]
    assert series.between(datetime(1990, 1, 1), datetime(1990, 1, 2)).timestamps == []


def test_results_file_appends(tmp_path):
    path = tmp_path / "results.csv"
    r = MetricsReport("gru", 24, 1, 1.5, 2.0, 10, 3, "abc")
    append_results(path, [r])
    append_results(path, [r])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(RESULTS_HEADER)
    assert lines[1] == lines[2] == "gru,24,1,1.5,2.0,10,3,abc"
