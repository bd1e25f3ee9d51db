"""Trainable models written directly on numpy."""

from .config import ModelConfig, RegularizationConfig, TrainConfig
from .indicator import RiskIndicatorSeries, indicator_from_model, indicator_values, smooth_indicator
from .losses import cross_entropy, data_loss, loss, mse, penalty, penalty_grad
from .network import (
    BatchNormParams,
    Network,
    backward,
    batch_norm_forward,
    forward,
    gru_forward,
    init_params,
)
from .training import (
    EpochRecord,
    TrainedModel,
    dumps_model,
    loads_model,
    loss_and_grad,
    mc_dropout_predict,
    model_from_dict,
    model_to_dict,
    train,
)

__all__ = [
    "BatchNormParams",
    "EpochRecord",
    "ModelConfig",
    "Network",
    "RegularizationConfig",
    "RiskIndicatorSeries",
    "TrainConfig",
    "TrainedModel",
    "backward",
    "batch_norm_forward",
    "cross_entropy",
    "data_loss",
    "dumps_model",
    "forward",
    "gru_forward",
    "indicator_from_model",
    "indicator_values",
    "init_params",
    "loads_model",
    "loss",
    "loss_and_grad",
    "mc_dropout_predict",
    "model_from_dict",
    "model_to_dict",
    "mse",
    "penalty",
    "penalty_grad",
    "smooth_indicator",
    "train",
]
