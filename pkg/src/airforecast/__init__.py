"""Deep sequence models (RNN, LSTM, GRU, Transformer) for hourly PM2.5
forecasting, built on a small reverse-mode autodiff core."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    EmptyDataError,
    ForecastError,
    ParseError,
    SchemaError,
    ShapeError,
    SplitError,
)

__version__ = "0.1.0"
