"""From-scratch GRU sequence regression."""
from .gradcheck import gradient_check, numeric_gradients
from .gru import GruLayerParams, gru_cell_forward, gru_layer_backward, gru_layer_forward
from .optim import AdamState, adam_step
from .regressor import (
    GRURegressor,
    TrainConfig,
    TrainingHistory,
    backward,
    forward,
    model_forward,
    mse_loss,
)

__all__ = [
    "AdamState", "GRURegressor", "GruLayerParams", "TrainConfig", "TrainingHistory",
    "adam_step", "backward", "forward", "gradient_check", "numeric_gradients", "gru_cell_forward", "gru_layer_backward",
    "gru_layer_forward", "model_forward", "mse_loss",
]
