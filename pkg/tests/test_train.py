import io

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from airforecast import numcore as nc
from airforecast.errors import ConfigError, ContractError, DivergenceError
from airforecast.models import ModelSpec, build_model
from airforecast.pipeline import WindowedDataset
from airforecast.train import (SGD, Adam, LossCurves, TrainConfig, evaluate_loss, fit,
                               make_optimizer, mse_loss)

SMALL_TRANSFORMER = dict(d_model=8, num_heads=2, num_encoder_layers=1, num_decoder_layers=1,
                         feedforward_size=8, dropout=0.0)


def dataset(inputs, labels, future=None):
    n, w, _ = inputs.shape
    future = labels[:, None].copy() if future is None else future
    return WindowedDataset(inputs, labels, future, w, future.shape[1], np.arange(n) + w)


def random_dataset(n=20, w=4, m=2, k=1, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, w, m))
    fut = rng.uniform(0.2, 0.8, size=(n, k))
    return dataset(x, fut[:, -1].copy(), fut)


# --- loss -----------------------------------------------------------------

def test_mse_examples():
    assert mse_loss([1.0, 2.0], [1.0, 2.0]).item() == 0.0
    assert mse_loss([0.0, 0.0], [1.0, 3.0]).item() == 5.0
    with pytest.raises(ContractError):
        mse_loss([0.0, 1.0], [1.0])


def test_mse_gradient():
    p = nc.parameter([[0.3, -1.0, 2.0]])
    y = np.array([1.0, 0.5, 0.0])
    nc.backward(mse_loss(p, y))
    np.testing.assert_allclose(p.grad[0], 2 * (p.data[0] - y) / 3, rtol=1e-14)
    nc.zero_grad([p])
    assert nc.check_gradients(lambda: mse_loss(p, y), [p]) < 1e-8


# --- optimizers -----------------------------------------------------------

def param_with_grad(value, grad):
    p = nc.parameter([[value]])
    p.grad = np.array([[grad]])
    return p


def test_sgd_step():
    p = param_with_grad(1.0, 0.5)
    SGD(0.1).step({"p": p})
    assert p.item() == pytest.approx(0.95, abs=1e-15)


def test_adam_first_step_is_minus_lr():
    p = param_with_grad(0.0, 1.0)
    Adam(0.01).step({"p": p})
    assert p.item() == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)


def test_adamw_decay_is_decoupled():
    p = param_with_grad(2.0, 0.0)
    Adam(0.1, weight_decay=0.5).step({"p": p})
    # zero gradient: the moment update contributes nothing, only the decay acts
    assert p.item() == pytest.approx(2.0 * (1 - 0.1 * 0.5), abs=1e-15)


def test_missing_gradient_is_an_error():
    p = nc.parameter([[1.0]])
    for opt in (SGD(0.1), Adam(0.1)):
        with pytest.raises(ContractError, match="gradient"):
            opt.step({"p": p})


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_adamw_without_decay_equals_adam(seed, steps):
    rng = np.random.default_rng(seed)
    start = rng.normal(size=(3, 2))
    grads = rng.normal(size=(steps, 3, 2))
    adam = make_optimizer(TrainConfig(optimizer="adam", learning_rate=1e-2))
    adamw = make_optimizer(TrainConfig(optimizer="adamw", learning_rate=1e-2, weight_decay=0.0))
    a, b = nc.parameter(start), nc.parameter(start)
    for g in grads:
        a.grad, b.grad = g.copy(), g.copy()
        adam.step({"p": a})
        adamw.step({"p": b})
    assert a.data.tobytes() == b.data.tobytes()


def test_weight_decay_ignored_for_adam():
    assert make_optimizer(TrainConfig(optimizer="adam", weight_decay=0.3)).weight_decay == 0.0
    assert make_optimizer(TrainConfig(optimizer="adamw", weight_decay=0.3)).weight_decay == 0.3


def test_config_validation():
    for bad in (dict(epochs=0), dict(batch_size=0), dict(optimizer="rmsprop"),
                dict(learning_rate=-1.0), dict(grad_clip=0.0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    cfg = TrainConfig(optimizer="AdamW", grad_clip=1.0)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# --- fit ------------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters():
    data = random_dataset()
    spec = ModelSpec("gru", hidden_size=3)
    trained, curves = fit(spec, data, data, TrainConfig(epochs=1, learning_rate=0.0, batch_size=64))
    fresh = build_model(spec, 2, 4, 1, seed=0)
    for name, arr in fresh.state_arrays().items():
        assert trained.params[name].tobytes() == arr.tobytes()
    assert curves.train_mse[0] == pytest.approx(evaluate_loss(fresh, data), rel=1e-12)


def test_linear_target_converges():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 0.5, size=(256, 3, 1))
    data = dataset(x, 2 * x[:, -1, 0])
    spec = ModelSpec("rnn", hidden_size=2, head_activation="linear")
    initial = evaluate_loss(build_model(spec, 1, 3, 1, seed=0), data)
    trained, curves = fit(spec, data, None, TrainConfig(epochs=200, learning_rate=1e-3,
                                                        batch_size=8))
    final = evaluate_loss(trained.forecaster(), data)
    assert final < 0.01 * initial
    assert len(curves.train_mse) == 200 and np.all(np.isfinite(curves.train_mse))


@pytest.mark.parametrize("kind", ["rnn", "lstm", "gru", "transformer", "persistence"])
def test_training_is_bitwise_deterministic(kind):
    data, test = random_dataset(seed=1, k=2), random_dataset(n=7, seed=2, k=2)
    spec = ModelSpec(kind, hidden_size=3, **SMALL_TRANSFORMER)
    cfg = TrainConfig(epochs=3, learning_rate=1e-2, batch_size=6, seed=5)
    (m1, c1), (m2, c2) = fit(spec, data, test, cfg), fit(spec, data, test, cfg)
    assert c1 == c2
    assert m1.to_dict() == m2.to_dict()
    assert len(c1.train_mse) == len(c1.test_mse) == 3


def test_dropout_training_is_deterministic():
    data = random_dataset(seed=3)
    spec = ModelSpec("transformer", d_model=8, num_heads=2, num_encoder_layers=1,
                     num_decoder_layers=1, feedforward_size=8, dropout=0.2)
    cfg = TrainConfig(epochs=2, learning_rate=1e-2, batch_size=8)
    assert fit(spec, data, data, cfg)[1] == fit(spec, data, data, cfg)[1]


@pytest.mark.parametrize("spec", [
    ModelSpec("rnn"), ModelSpec("lstm"), ModelSpec("gru"), ModelSpec("transformer", dropout=0.0),
], ids=lambda s: s.kind)
def test_single_batch_overfit(spec):
    data = random_dataset(n=8, w=6, seed=4)
    model = build_model(spec, 2, 6, 1, seed=0)
    params = model.parameters()
    opt = Adam(1e-3)
    for _ in range(2000):
        nc.zero_grad(params.values())
        pred, target = model.training_output(data.inputs, data.labels, data.future)
        loss = mse_loss(pred, target)
        if loss.item() < 1e-4:
            break
        nc.backward(loss)
        opt.step(params)
    assert loss.item() < 1e-4


def test_divergence_names_epoch_and_batch():
    data = random_dataset(n=12)
    data.inputs[5, 0, 0] = np.nan
    cfg = TrainConfig(epochs=2, batch_size=4, shuffle=False)
    with pytest.raises(DivergenceError) as info:
        fit(ModelSpec("rnn", hidden_size=2), data, None, cfg)
    assert (info.value.epoch, info.value.batch) == (1, 2)
    assert info.value.exit_code == 3


def test_empty_training_set():
    empty = dataset(np.zeros((0, 3, 1)), np.zeros(0))
    with pytest.raises(ContractError):
        fit(ModelSpec("rnn"), empty, None, TrainConfig(epochs=1))


def test_grad_clip_keeps_training_finite():
    data = random_dataset(n=16, w=8)
    cfg = TrainConfig(epochs=2, learning_rate=1e-2, batch_size=4, grad_clip=0.5)
    _, curves = fit(ModelSpec("rnn", hidden_size=4), data, data, cfg)
    assert np.all(np.isfinite(curves.train_mse))


def test_transformer_trains_on_whole_future_path():
    data = random_dataset(n=6, k=3, seed=8)
    model = build_model(ModelSpec("transformer", **SMALL_TRANSFORMER), 2, 4, 3)
    pred, target = model.training_output(data.inputs, data.labels, data.future)
    assert pred.shape == (1, 18)
    np.testing.assert_array_equal(target.reshape(6, 3), data.future)


def test_loss_curve_csv():
    buf = io.StringIO()
    LossCurves([0.5, 0.25], [0.4, 0.3]).to_csv(buf)
    assert buf.getvalue() == "epoch,train_mse,test_mse\n1,0.5,0.4\n2,0.25,0.3\n"
