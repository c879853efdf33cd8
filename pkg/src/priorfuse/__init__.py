"""Prior-guided infrared/visible image fusion on a small numpy autograd engine."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import FusionConfig, LossWeights, load_config, toy_config
from .errors import (ConfigurationError, DimensionError, FusionError, InputError, IntegrityError,
                     OracleError, ParameterError)
from .losses import LossReport, total_loss
from .metrics import MetricReport, evaluate
from .model import FusionNet
from .tensor import Tensor, no_grad
from .train import model_from_checkpoint, train_toy

__all__ = [
    "Checkpoint", "ConfigurationError", "DimensionError", "FusionConfig", "FusionError", "FusionNet",
    "InputError", "IntegrityError", "LossReport", "LossWeights", "MetricReport", "OracleError",
    "ParameterError", "Tensor", "evaluate", "load_checkpoint", "load_config", "model_from_checkpoint",
    "no_grad", "save_checkpoint", "toy_config", "total_loss", "train_toy",
]
