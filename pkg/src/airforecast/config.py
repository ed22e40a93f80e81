"""Experiment configuration: a plain-text ``key = value`` file with sections.

Grammar (configparser INI)::

    [data]      path, cyclical_time, row_fraction, strict_gaps
    [split]     train_fraction, scaler_scope (train | full)
    [model]     kind, hidden_size, head_activation, d_model, num_heads,
                num_encoder_layers, num_decoder_layers, feedforward_size, dropout
    [window]    w (hours) or window_days, k (hours)
    [train]     epochs, learning_rate, batch_size, optimizer, adam_beta1,
                adam_beta2, adam_epsilon, weight_decay, seed, shuffle, grad_clip
    [output]    dir, series_start, series_end (ISO timestamps, optional)
    [grid]      models, w, k (comma separated), workers

Lines starting with ``#`` or ``;`` are comments, as is anything after
`` #``. A run manifest (JSON written by ``run``) is accepted anywhere a
config file is.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

from .errors import ConfigError
from .ingest import FeatureConfig
from .models import ModelSpec
from .train import TrainConfig

log = logging.getLogger(__name__)

STUDIED_WINDOWS = (24, 48, 96, 192, 384)
OUTPUT_ENV = "AIRFORECAST_OUTPUT_DIR"
RECURRENT = ("rnn", "lstm", "gru")


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "runs")


@dataclass(frozen=True)
class GridSpec:
    models: tuple[str, ...] = ("rnn", "lstm", "gru", "transformer")
    windows: tuple[int, ...] = STUDIED_WINDOWS
    horizons: tuple[int, ...] = (1,)
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: str
    model: ModelSpec
    w: int = 24
    k: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train_fraction: float = 0.7
    scaler_scope: str = "train"
    row_fraction: float = 1.0
    strict_gaps: bool = False
    output_dir: str = field(default_factory=default_output_dir)
    series_start: str | None = None
    series_end: str | None = None
    grid: GridSpec | None = None

    def __post_init__(self):
        if self.w < 1:
            raise ConfigError(f"window w must be >= 1, got {self.w}")
        if self.k < 1:
            raise ConfigError(f"horizon k must be >= 1, got {self.k}")
        if self.w not in STUDIED_WINDOWS:
            log.warning("window w=%d is outside the studied set %s", self.w, STUDIED_WINDOWS)
        if self.scaler_scope not in ("train", "full"):
            raise ConfigError(f"scaler_scope must be 'train' or 'full', got {self.scaler_scope!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0.0 < self.row_fraction <= 1.0:
            raise ConfigError("row_fraction must lie in (0, 1]")
        for stamp in (self.series_start, self.series_end):
            if stamp is not None:
                parse_timestamp(stamp)

    def with_cell(self, kind: str, w: int, k: int, seed: int, output_dir: str) -> "ExperimentConfig":
        return replace(self, model=replace(self.model, kind=kind), w=w, k=k,
                       train=replace(self.train, seed=seed), output_dir=output_dir)

    def to_dict(self) -> dict:
        d = {
            "data": {"path": self.data_path, "cyclical_time": self.features.cyclical_time,
                     "row_fraction": self.row_fraction, "strict_gaps": self.strict_gaps},
            "split": {"train_fraction": self.train_fraction, "scaler_scope": self.scaler_scope},
            "model": self.model.to_dict(),
            "window": {"w": self.w, "k": self.k},
            "train": self.train.to_dict(),
            "output": {"dir": self.output_dir, "series_start": self.series_start,
                       "series_end": self.series_end},
        }
        if self.grid is not None:
            d["grid"] = {"models": list(self.grid.models), "w": list(self.grid.windows),
                         "k": list(self.grid.horizons), "workers": self.grid.workers}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        grid = None
        if d.get("grid"):
            g = d["grid"]
            grid = GridSpec(tuple(g["models"]), tuple(g["w"]), tuple(g["k"]), g.get("workers", 1))
        return cls(
            data_path=d["data"]["path"],
            model=ModelSpec.from_dict(d["model"]),
            w=d["window"]["w"],
            k=d["window"]["k"],
            train=TrainConfig.from_dict(d["train"]),
            features=FeatureConfig(cyclical_time=d["data"].get("cyclical_time", False)),
            train_fraction=d["split"]["train_fraction"],
            scaler_scope=d["split"]["scaler_scope"],
            row_fraction=d["data"].get("row_fraction", 1.0),
            strict_gaps=d["data"].get("strict_gaps", False),
            output_dir=d["output"]["dir"],
            series_start=d["output"].get("series_start"),
            series_end=d["output"].get("series_end"),
            grid=grid,
        )

    def fingerprint(self) -> str:
        """Short hash of everything that affects results (the output dir does not)."""
        d = self.to_dict()
        d.pop("output")
        d.pop("grid", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def parse_timestamp(text: str) -> datetime:
    for fmt in ("%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H", "%Y-%m-%d-%H:%M", "%Y-%m-%d"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            pass
    raise ConfigError(f"unrecognised timestamp {text!r}")


def derive_seed(base_seed: int, model: str, w: int, k: int) -> int:
    """Stable per-cell seed, so adding grid cells never changes existing ones."""
    digest = hashlib.sha256(f"{base_seed}|{model}|{w}|{k}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: expected {conv.__name__}") from None


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


_bool.__name__ = "bool"


def _optional_float(text: str):
    return None if text.lower() in ("", "none", "off") else float(text)


_optional_float.__name__ = "float"


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(";", ",").split(",") if t.strip())


_ints.__name__ = "integer list"


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip().lower() for t in text.replace(";", ",").split(",") if t.strip())


_names.__name__ = "name list"


def parse_config_text(text: str, base_dir: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sec = {name: parser[name] for name in parser.sections()}
    known = {"data", "split", "model", "window", "train", "output", "grid"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    data = sec.get("data")
    if data is None or "path" not in data:
        raise ConfigError("[data] path is required")
    path = data["path"].strip()
    if base_dir and not os.path.isabs(path):
        path = os.path.abspath(os.path.join(base_dir, path))

    m = sec.get("model")
    if m is None or "kind" not in m:
        raise ConfigError("[model] kind is required")
    kind = m["kind"].strip().lower()
    grid_models = _get(sec.get("grid"), "models", _names, ())
    needs_hidden = kind in RECURRENT or any(g in RECURRENT for g in grid_models)
    if needs_hidden and "hidden_size" not in m:
        raise ConfigError("[model] hidden_size is required for recurrent models")
    model = ModelSpec(
        kind=kind,
        hidden_size=_get(m, "hidden_size", int, 32),
        head_activation=_get(m, "head_activation", str, "sigmoid"),
        d_model=_get(m, "d_model", int, 64),
        num_heads=_get(m, "num_heads", int, 4),
        num_encoder_layers=_get(m, "num_encoder_layers", int, 2),
        num_decoder_layers=_get(m, "num_decoder_layers", int, 2),
        feedforward_size=_get(m, "feedforward_size", int, 128),
        dropout=_get(m, "dropout", float, 0.1),
    )

    win = sec.get("window")
    w = _get(win, "w", int, None)
    days = _get(win, "window_days", float, None)
    if w is not None and days is not None:
        raise ConfigError("[window] give either w or window_days, not both")
    if days is not None:
        w = int(round(days * 24))
    k = _get(win, "k", int, 1)

    t = sec.get("train")
    defaults = TrainConfig()
    train = TrainConfig(
        epochs=_get(t, "epochs", int, defaults.epochs),
        learning_rate=_get(t, "learning_rate", float, defaults.learning_rate),
        batch_size=_get(t, "batch_size", int, defaults.batch_size),
        optimizer=_get(t, "optimizer", str, defaults.optimizer),
        adam_beta1=_get(t, "adam_beta1", float, defaults.adam_beta1),
        adam_beta2=_get(t, "adam_beta2", float, defaults.adam_beta2),
        adam_epsilon=_get(t, "adam_epsilon", float, defaults.adam_epsilon),
        weight_decay=_get(t, "weight_decay", float, defaults.weight_decay),
        seed=_get(t, "seed", int, defaults.seed),
        shuffle=_get(t, "shuffle", _bool, defaults.shuffle),
        grad_clip=_get(t, "grad_clip", _optional_float, defaults.grad_clip),
    )

    grid = None
    g = sec.get("grid")
    if g is not None:
        grid = GridSpec(
            models=grid_models or GridSpec.models,
            windows=_get(g, "w", _ints, None) or _window_days(g) or GridSpec.windows,
            horizons=_get(g, "k", _ints, GridSpec.horizons),
            workers=_get(g, "workers", int, 1),
        )
        if not (grid.models and grid.windows and grid.horizons):
            raise ConfigError("[grid] axes must be non-empty")

    split = sec.get("split")
    out = sec.get("output")
    return ExperimentConfig(
        data_path=path,
        model=model,
        w=w if w is not None else 24,
        k=k,
        train=train,
        features=FeatureConfig(cyclical_time=_get(data, "cyclical_time", _bool, False)),
        train_fraction=_get(split, "train_fraction", float, 0.7),
        scaler_scope=_get(split, "scaler_scope", str, "train").lower(),
        row_fraction=_get(data, "row_fraction", float, 1.0),
        strict_gaps=_get(data, "strict_gaps", _bool, False),
        output_dir=_get(out, "dir", str, default_output_dir()),
        series_start=_get(out, "series_start", str, None),
        series_end=_get(out, "series_end", str, None),
        grid=grid,
    )


def _window_days(section) -> tuple[int, ...] | None:
    if "window_days" not in section:
        return None
    return tuple(d * 24 for d in _get(section, "window_days", _ints, ()))


def load_config(path) -> ExperimentConfig:
    """Read an INI experiment config or a JSON run manifest."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            manifest = json.loads(text)
            return ExperimentConfig.from_dict(manifest["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path} is not a valid run manifest: {exc}") from None
    return parse_config_text(text, base_dir=str(path.parent))
