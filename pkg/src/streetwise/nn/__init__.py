from .adam import AdamHyper, AdamState, adam_step
from .io import deserialize_params, load_params, save_params, serialize_params
from .lstm import lstm_ae_backward, lstm_ae_forward
from .mlp import mlp_backward, mlp_forward
from .params import (
    FORMAT_VERSION,
    GradientVector,
    LstmAeArch,
    MlpArch,
    ParamSet,
    init_lstm_ae,
    init_mlp,
    lstm_ae_views,
    mlp_views,
)

__all__ = [
    "AdamHyper",
    "AdamState",
    "adam_step",
    "deserialize_params",
    "load_params",
    "save_params",
    "serialize_params",
    "lstm_ae_backward",
    "lstm_ae_forward",
    "mlp_backward",
    "mlp_forward",
    "FORMAT_VERSION",
    "GradientVector",
    "LstmAeArch",
    "MlpArch",
    "ParamSet",
    "init_lstm_ae",
    "init_mlp",
    "lstm_ae_views",
    "mlp_views",
]
