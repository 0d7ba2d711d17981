from .checkpoint import load_checkpoint, save_checkpoint
from .gru import (GruLayer, SurrogateModel, backward, forward, gru_cell, loss_and_grad, mae,
                  mse, param_count)
from .train import Prediction, TrainConfig, TrainResult, design_inputs, predict, train

__all__ = [
    "GruLayer", "Prediction", "SurrogateModel", "TrainConfig", "TrainResult", "backward",
    "design_inputs", "forward", "gru_cell", "load_checkpoint", "loss_and_grad", "mae", "mse",
    "param_count", "predict", "save_checkpoint", "train",
]
