import io
from datetime import datetime, timedelta

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from airforecast.errors import ContractError, SchemaError, SplitError
from airforecast.ingest import FeatureTable, series_table
from airforecast.pipeline import (Scaler, build_windows, chrono_split, expected_count, fit_minmax,
                                  scale, unscale_target)


def table_from(features, names=None, timestamps=None, target=0):
    features = np.asarray(features, dtype=np.float64)
    names = names or [f"c{i}" for i in range(features.shape[1])]
    timestamps = timestamps or [datetime(2012, 1, 1) + timedelta(hours=i)
                                for i in range(len(features))]
    return FeatureTable(timestamps, features, features[:, target].copy(), names, [],
                        target_column=names[target])


# --- split ----------------------------------------------------------------

@pytest.mark.parametrize("n,fraction,sizes", [
    (10, 0.7, (7, 3)),
    (43_800, 0.7, (30_660, 13_140)),
    (10, 0.999, (9, 1)),
    (100, 0.29, (29, 71)),
])
def test_split_sizes(n, fraction, sizes):
    train, test = chrono_split(series_table(np.arange(n, dtype=float)), fraction)
    assert (len(train), len(test)) == sizes


@pytest.mark.parametrize("n,fraction", [(1, 0.7), (10, 0.01), (10, 0.0), (10, 1.0)])
def test_split_empty_part(n, fraction):
    with pytest.raises(SplitError):
        chrono_split(series_table(np.arange(n, dtype=float)), fraction)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.floats(0.05, 0.95))
def test_split_preserves_order(n, fraction):
    table = series_table(np.arange(n, dtype=float))
    try:
        train, test = chrono_split(table, fraction)
    except SplitError:
        return
    np.testing.assert_array_equal(np.concatenate([train.target, test.target]), table.target)
    assert train.timestamps + test.timestamps == table.timestamps


# --- scaler ---------------------------------------------------------------

def test_fit_minmax_examples():
    s = fit_minmax(table_from([[0.0], [10.0]]))
    assert (s.mins[0], s.maxs[0]) == (0.0, 10.0)
    assert fit_minmax(table_from([[5.0], [5.0], [5.0]])).constant[0]
    s = fit_minmax(table_from([[1.0, 3.0], [2.0, 4.0]]))
    np.testing.assert_array_equal(s.mins, [1, 3])
    np.testing.assert_array_equal(s.maxs, [2, 4])


def test_scale_values():
    s = Scaler(np.array([0.0]), np.array([10.0]), ["c0"], "c0")
    out = scale(s, table_from([[5.0], [12.0]]))
    np.testing.assert_array_equal(out.features[:, 0], [0.5, 1.2])
    np.testing.assert_array_equal(out.target, [0.5, 1.2])


def test_constant_column_scales_to_zero():
    s = fit_minmax(table_from([[1.0, 0.0], [2.0, 0.0]]))
    out = scale(s, table_from([[1.5, 0.0], [3.0, 1.0]]))
    np.testing.assert_array_equal(out.features[:, 1], [0.0, 0.0])
    assert np.all(np.isfinite(out.features))


def test_scale_column_mismatch():
    s = fit_minmax(table_from([[1.0], [2.0]], names=["a"]))
    with pytest.raises(SchemaError):
        scale(s, table_from([[1.0], [2.0]], names=["b"]))


def test_scaler_dict_roundtrip():
    s = fit_minmax(table_from([[1.0, 3.0], [2.0, 4.5]]))
    back = Scaler.from_dict(s.to_dict())
    assert back.mins.tobytes() == s.mins.tobytes() and back.maxs.tobytes() == s.maxs.tobytes()
    assert back.column_names == s.column_names


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e4, 1e4)))
def test_unscale_inverts_scale(values):
    table = table_from(values.reshape(-1, 1))
    s = fit_minmax(table)
    if s.constant[0]:
        return
    back = unscale_target(s, scale(s, table).target)
    np.testing.assert_allclose(back, values, rtol=0, atol=1e-12 * max(1.0, np.abs(values).max()))


# --- windows --------------------------------------------------------------

def test_worked_single_step_alignment():
    table = series_table(np.arange(1.0, 9.0))  # rows hold 1..8
    ds = build_windows(table, 3, 1)
    assert len(ds) == 5
    np.testing.assert_array_equal(ds.inputs[0, :, 0], [1, 2, 3])
    assert ds.labels[0] == 4.0
    assert ds.label_row_index[0] == 3


def test_worked_multi_step_alignment():
    ds = build_windows(series_table(np.arange(1.0, 9.0)), 3, 3)
    assert len(ds) == 3
    assert ds.labels[0] == 6.0
    np.testing.assert_array_equal(ds.future[0], [4, 5, 6])


def test_too_short_is_empty_not_error():
    ds = build_windows(series_table([1.0, 2.0, 3.0]), 3, 1)
    assert ds.empty and len(ds) == 0
    assert ds.inputs.shape == (0, 3, 1)


def test_bad_window_args():
    with pytest.raises(ContractError):
        build_windows(series_table([1.0, 2.0]), 0, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(1, 12), st.integers(1, 12), st.integers(1, 3),
       st.integers(0, 2**31))
def test_windows_match_brute_force_slicing(n_rows, w, k, m, seed):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n_rows, m))
    target = int(rng.integers(m))
    if n_rows == 0:
        table = FeatureTable([], np.zeros((0, m)), np.zeros(0), [f"c{i}" for i in range(m)], [],
                             target_column=f"c{target}")
    else:
        table = table_from(feats, target=target)
    ds = build_windows(table, w, k)
    assert len(ds) == max(0, n_rows - w - k + 1) == expected_count(n_rows, w, k)
    for i in range(len(ds)):
        np.testing.assert_array_equal(ds.inputs[i], feats[i:i + w])
        assert ds.labels[i] == feats[i + w - 1 + k, target]
        np.testing.assert_array_equal(ds.future[i], feats[i + w:i + w + k, target])
        assert ds.label_row_index[i] == i + w - 1 + k
        np.testing.assert_array_equal(ds.target_history[i], feats[i:i + w, target])


def test_windows_bridge_gaps_unless_strict():
    ts = [datetime(2012, 1, 1) + timedelta(hours=h) for h in (0, 1, 2, 4, 5, 6, 7)]
    table = table_from(np.arange(7.0).reshape(-1, 1), timestamps=ts)
    assert len(build_windows(table, 2, 1)) == 5
    strict = build_windows(table, 2, 1, strict_gaps=True)
    # the gap sits between rows 2 and 3; windows whose rows or label cross it are dropped
    np.testing.assert_array_equal(strict.label_row_index, [2, 5, 6])
    np.testing.assert_array_equal(strict.inputs[:, :, 0], [[0, 1], [3, 4], [4, 5]])


def test_dataset_csv_layout():
    ds = build_windows(series_table([1.0, 2.0, 3.0, 4.0]), 2, 1)
    buf = io.StringIO()
    ds.to_csv(buf)
    assert buf.getvalue().splitlines() == ["N,w,m,k", "2,2,1,1", "1.0,2.0,3.0", "2.0,3.0,4.0"]


def test_label_timestamps_follow_label_rows():
    table = series_table(np.arange(6.0))
    ds = build_windows(table, 2, 2)
    assert ds.label_timestamps == [table.timestamps[i] for i in ds.label_row_index]
