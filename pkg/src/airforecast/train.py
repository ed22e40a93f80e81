"""MSE training loop with SGD, Adam and AdamW."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import IO

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ContractError, DivergenceError
from .models import ModelSpec, TrainedModel, build_model
from .numcore import Tensor
from .pipeline import Scaler, WindowedDataset

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam", "adamw")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 5e-4
    batch_size: int = 256
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    shuffle: bool = True
    grad_clip: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "optimizer", self.optimizer.lower())
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LossCurves:
    train_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)

    def to_csv(self, fh: IO[str]) -> None:
        fh.write("epoch,train_mse,test_mse\n")
        for epoch, (tr, te) in enumerate(zip(self.train_mse, self.test_mse), start=1):
            fh.write(f"{epoch},{tr!r},{te!r}\n")


def mse_loss(predictions, labels) -> Tensor:
    pred = predictions if isinstance(predictions, Tensor) else nc.constant(
        np.asarray(predictions, dtype=np.float64).reshape(1, -1))
    target = np.asarray(labels, dtype=np.float64)
    if pred.data.size != target.size or target.size == 0:
        raise ContractError(f"mse_loss: {pred.data.size} predictions vs {target.size} labels")
    diff = pred - nc.constant(target.reshape(pred.shape))
    return nc.mean_all(diff * diff)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            g = _grad_of(name, p)
            p.data = p.data - self.lr * g


class Adam:
    """Adam with bias-corrected moments. ``weight_decay`` > 0 gives AdamW, whose
    decay shrinks parameters directly instead of entering the moments."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = _grad_of(name, p)
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            data = p.data
            if self.weight_decay:
                data = data * (1.0 - self.lr * self.weight_decay)
            p.data = data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _grad_of(name: str, p: Tensor) -> np.ndarray:
    if p.grad is None:
        raise ContractError(f"parameter {name!r} has no gradient")
    return p.grad


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    decay = config.weight_decay if config.optimizer == "adamw" else 0.0
    return Adam(config.learning_rate, config.adam_beta1, config.adam_beta2,
                config.adam_epsilon, decay)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values()))
    if total > max_norm:
        factor = max_norm / total
        for p in params.values():
            p.grad = p.grad * factor
    return total


def evaluate_loss(model, data: WindowedDataset, batch_size: int = 512) -> float:
    """Sample-weighted MSE of the training objective over a whole dataset."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    with nc.no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            inputs, labels, future = data.batch(idx)
            if model.trainable:
                pred, target = model.training_output(inputs, labels, future)
                pred = pred.data.reshape(-1)
                target = target.reshape(-1)
            else:
                pred, target = model.predict(inputs), labels
            total += float(((pred - target) ** 2).sum()) / target.size * len(idx)
    return total / len(data)


def fit(spec: ModelSpec, train: WindowedDataset, test: WindowedDataset | None,
        config: TrainConfig, scaler: Scaler | None = None, feature_columns=None,
        metadata: dict | None = None) -> tuple[TrainedModel, LossCurves]:
    """Train a fresh model on ``train``, recording per-epoch train/test MSE.

    Each epoch visits the training windows in a seeded random order (unless
    ``shuffle`` is off) in mini-batches; the last batch may be short. The
    recorded train MSE is the mean of the batch losses, the test MSE a full
    pass after the epoch.
    """
    if len(train) == 0:
        raise ContractError("cannot train on an empty dataset")
    model = build_model(spec, train.n_features, train.window, train.horizon,
                        train.target_index, seed=config.seed)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    curves = LossCurves()
    params = model.parameters()
    optimizer = make_optimizer(config)
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        if not model.trainable:
            curves.train_mse.append(evaluate_loss(model, train))
            curves.test_mse.append(evaluate_loss(model, test) if test is not None else float("nan"))
            continue
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, config.batch_size), start=1):
            inputs, labels, future = train.batch(order[start:start + config.batch_size])
            nc.zero_grad(params.values())
            rng = dropout_rng if spec.kind == "transformer" and spec.dropout > 0 else None
            pred, target = model.training_output(inputs, labels, future, rng=rng)
            loss = mse_loss(pred, target)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            nc.backward(loss)
            if config.grad_clip is not None:
                clip_gradients(params, config.grad_clip)
            optimizer.step(params)
            batch_losses.append(value)
        curves.train_mse.append(float(np.mean(batch_losses)))
        curves.test_mse.append(evaluate_loss(model, test) if test is not None else float("nan"))
        log.info("%s epoch %d/%d train_mse=%.6g test_mse=%.6g", spec.kind, epoch,
                 config.epochs, curves.train_mse[-1], curves.test_mse[-1])
    nc.zero_grad(params.values())
    meta = {"train_config": config.to_dict()}
    meta.update(metadata or {})
    trained = TrainedModel.from_forecaster(model, scaler, feature_columns, meta)
    return trained, curves
