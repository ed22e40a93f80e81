from .baseline import persistence_forecast
from .forecaster import (
    MODEL_KINDS,
    Forecaster,
    ModelSpec,
    PersistenceForecaster,
    RecurrentForecaster,
    TrainedModel,
    TransformerForecaster,
    build_model,
)
from .recurrent import (
    OutputHead,
    RecurrentCellParams,
    gru_step,
    lstm_step,
    recurrent_forward,
    rnn_step,
    run_recurrent,
)
from .transformer import (
    TransformerParams,
    multi_head_attention,
    positional_encoding,
    transformer_forward,
)
