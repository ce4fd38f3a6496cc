from . import autograd as ag
from .autograd import NumericalError, ShapeError, Tensor, backward, constant
from .checkpoint import CheckpointError
from .optim import AdamState, adam_step
from .rng import stream, xavier_init

__all__ = [
    "ag", "Tensor", "constant", "backward", "ShapeError", "NumericalError",
    "CheckpointError", "AdamState", "adam_step", "stream", "xavier_init",
]
