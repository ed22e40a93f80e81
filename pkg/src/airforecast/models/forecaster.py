"""Model specs, a uniform forecaster interface and the trained-model container."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import numcore as nc
from ..errors import ConfigError, ContractError, ShapeError
from ..pipeline import Scaler
from .recurrent import OutputHead, RecurrentCellParams, recurrent_forward
from .transformer import TransformerParams, last_position, transformer_forward

MODEL_KINDS = ("rnn", "lstm", "gru", "transformer", "persistence")
FORMAT = "airforecast.model/1"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hidden_size: int = 32
    head_activation: str = "sigmoid"
    d_model: int = 64
    num_heads: int = 4
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    feedforward_size: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be positive")
        if self.head_activation not in ("sigmoid", "linear"):
            raise ConfigError(f"head_activation must be sigmoid or linear, got {self.head_activation!r}")
        if self.d_model % self.num_heads or self.d_model % 2:
            raise ConfigError("d_model must be even and divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Forecaster:
    """Maps scaled w x m windows to the scaled target k steps after each window."""

    trainable = True

    def __init__(self, spec: ModelSpec, n_features: int, window: int, horizon: int,
                 target_index: int = 0):
        self.spec = spec
        self.n_features = n_features
        self.window = window
        self.horizon = horizon
        self.target_index = target_index

    @property
    def kind(self) -> str:
        return self.spec.kind

    def parameters(self) -> dict[str, nc.Tensor]:
        return {}

    def training_output(self, inputs, labels, future, rng=None):
        """Return (prediction tensor, matching target array) for the loss."""
        raise NotImplementedError

    def _predict_batch(self, inputs) -> np.ndarray:
        raise NotImplementedError

    def predict(self, inputs, batch_size: int = 512) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 2:
            inputs = inputs[None]
        if inputs.shape[1:] != (self.window, self.n_features):
            raise ShapeError(f"inputs of shape {inputs.shape[1:]} do not match "
                             f"({self.window}, {self.n_features})")
        out = np.empty(len(inputs))
        with nc.no_grad():
            for start in range(0, len(inputs), batch_size):
                chunk = np.ascontiguousarray(inputs[start:start + batch_size])
                out[start:start + len(chunk)] = self._predict_batch(chunk)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ContractError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, t in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


class RecurrentForecaster(Forecaster):
    def __init__(self, spec, n_features, window, horizon, target_index=0, rng=None):
        super().__init__(spec, n_features, window, horizon, target_index)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cell = RecurrentCellParams.initialize(spec.kind, n_features, spec.hidden_size, rng)
        self.head = OutputHead.initialize(spec.hidden_size, rng, spec.head_activation)

    def parameters(self):
        params = self.cell.named_tensors()
        params["W_y"] = self.head.weight
        params["b_y"] = self.head.bias
        return params

    def training_output(self, inputs, labels, future, rng=None):
        return recurrent_forward(self.cell, self.head, inputs), np.asarray(labels).reshape(1, -1)

    def _predict_batch(self, inputs):
        return recurrent_forward(self.cell, self.head, inputs).data[0]


class TransformerForecaster(Forecaster):
    def __init__(self, spec, n_features, window, horizon, target_index=0, rng=None):
        super().__init__(spec, n_features, window, horizon, target_index)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = TransformerParams.initialize(
            n_features, rng, d_model=spec.d_model, num_heads=spec.num_heads,
            num_encoder_layers=spec.num_encoder_layers,
            num_decoder_layers=spec.num_decoder_layers,
            feedforward_size=spec.feedforward_size, dropout_rate=spec.dropout)

    def parameters(self):
        return self.params.named_tensors()

    def forward(self, inputs, mode="autoregressive", labels=None, rng=None):
        inputs = np.asarray(inputs, dtype=np.float64)
        return transformer_forward(self.params, inputs, inputs[:, :, self.target_index],
                                   self.horizon, mode=mode, labels=labels, rng=rng)

    def training_output(self, inputs, labels, future, rng=None):
        future = np.asarray(future).reshape(len(inputs), -1)
        out = self.forward(inputs, mode="teacher_forced", labels=future, rng=rng)
        return out, future.reshape(1, -1)

    def _predict_batch(self, inputs):
        out = self.forward(inputs, mode="autoregressive")
        return last_position(out, len(inputs), self.horizon).data[0]


class PersistenceForecaster(Forecaster):
    trainable = False

    def training_output(self, inputs, labels, future, rng=None):
        raise ContractError("the persistence baseline has nothing to train")

    def _predict_batch(self, inputs):
        return inputs[:, -1, self.target_index].copy()


def build_model(spec: ModelSpec, n_features: int, window: int, horizon: int,
                target_index: int = 0, seed: int = 0) -> Forecaster:
    """Instantiate a forecaster with seeded parameter initialisation."""
    if window < 1 or horizon < 1:
        raise ContractError("window and horizon must be >= 1")
    rng = np.random.default_rng(seed)
    if spec.kind in ("rnn", "lstm", "gru"):
        return RecurrentForecaster(spec, n_features, window, horizon, target_index, rng)
    if spec.kind == "transformer":
        return TransformerForecaster(spec, n_features, window, horizon, target_index, rng)
    return PersistenceForecaster(spec, n_features, window, horizon, target_index)


@dataclass
class TrainedModel:
    spec: ModelSpec
    window: int
    horizon: int
    n_features: int
    target_index: int
    params: dict[str, np.ndarray]
    scaler: Scaler | None = None
    feature_columns: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_forecaster(cls, model: Forecaster, scaler: Scaler | None = None,
                        feature_columns=None, metadata=None) -> "TrainedModel":
        return cls(model.spec, model.window, model.horizon, model.n_features, model.target_index,
                   model.state_arrays(), scaler, list(feature_columns or []), dict(metadata or {}))

    def forecaster(self) -> Forecaster:
        model = build_model(self.spec, self.n_features, self.window, self.horizon,
                            self.target_index)
        model.load_arrays(self.params)
        return model

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "model": self.spec.to_dict(),
            "window": self.window,
            "horizon": self.horizon,
            "n_features": self.n_features,
            "target_index": self.target_index,
            "feature_columns": list(self.feature_columns),
            "scaler": self.scaler.to_dict() if self.scaler is not None else None,
            "metadata": self.metadata,
            "params": {name: {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}
                       for name, arr in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != FORMAT:
            raise ContractError(f"unsupported model format {d.get('format')!r}")
        params = {name: np.array(p["data"], dtype=np.float64).reshape(p["shape"])
                  for name, p in d["params"].items()}
        scaler = Scaler.from_dict(d["scaler"]) if d.get("scaler") else None
        return cls(ModelSpec.from_dict(d["model"]), d["window"], d["horizon"], d["n_features"],
                   d["target_index"], params, scaler, d.get("feature_columns", []),
                   d.get("metadata", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read model file {path}: {exc}") from None
        except (ValueError, KeyError, TypeError) as exc:
            if isinstance(exc, ContractError):
                raise
            raise ConfigError(f"malformed model file {path}: {exc!r}") from None
