"""Recurrent encoder-decoder predictor, trained with analytic gradients.

No autograd framework: forward passes build explicit caches and every
backward pass is hand-derived. All math runs in float64 numpy with the
elementwise gate kernels from pedflow.kernels.
"""

from .layers import attention, recurrent_cell, softmax
from .model import Prediction, forward, loss_and_grads, predict
from .params import ModelConfig, ModelParams
from .training import TrainConfig, TrainResult, evaluate, train

__all__ = [
    "ModelConfig", "ModelParams", "Prediction", "TrainConfig", "TrainResult",
    "attention", "evaluate", "forward", "loss_and_grads", "predict",
    "recurrent_cell", "softmax", "train",
]
