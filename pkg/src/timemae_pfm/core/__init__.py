from . import ops
from .gradcheck import GradCheckResult, grad_check, relative_error
from .optim import Adam, AdamState
from .tensor import NumericError, ShapeError, Tape, Tensor, active_tape, as_tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckResult",
    "NumericError",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "grad_check",
    "no_grad",
    "ops",
    "relative_error",
]
