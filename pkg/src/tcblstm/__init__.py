"""Time-convolved DNN-BLSTM-DNN frame classifiers in numpy, with SGD and asynchronous SGD trainers."""

from ._backend import backend_name
from .errors import TcBlstmError
from .model import ModelConfig, ModelParams, backward, evaluate, forward, init_params, predict

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "ModelParams",
    "TcBlstmError",
    "backend_name",
    "backward",
    "evaluate",
    "forward",
    "init_params",
    "predict",
]
