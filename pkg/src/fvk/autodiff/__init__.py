from .tensor import Tensor, ShapeError, no_grad, grad_enabled
from . import ops
from .optim import Adam, Sgd, NumericsError, clip_grad_norm, clip_grad_value
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

__all__ = [
    "Tensor", "ShapeError", "no_grad", "grad_enabled", "ops",
    "Adam", "Sgd", "NumericsError", "clip_grad_norm", "clip_grad_value",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
