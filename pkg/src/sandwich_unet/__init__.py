"""U-Net with a ReLU encoder and learnable-AReLU decoder, on a numpy autodiff core."""

from .errors import CheckpointError, DataError, NumericalError, SandwichError, ShapeError
from .model import Model, UNetConfig, build, forward, load_checkpoint, parameter_count, save_checkpoint
from .tensor import Tensor, backward, check_gradients, no_grad

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DataError",
    "Model",
    "NumericalError",
    "SandwichError",
    "ShapeError",
    "Tensor",
    "UNetConfig",
    "backward",
    "build",
    "check_gradients",
    "forward",
    "load_checkpoint",
    "no_grad",
    "parameter_count",
    "save_checkpoint",
    "__version__",
]
