from . import ops
from .gradcheck import GradCheckReport, grad_check, numeric_grad
from .params import Parameter, load_checkpoint, make_parameter, save_checkpoint
from .tensor import Tensor, as_tensor, backward, no_grad

__all__ = [
    "GradCheckReport",
    "Parameter",
    "Tensor",
    "as_tensor",
    "backward",
    "grad_check",
    "load_checkpoint",
    "make_parameter",
    "no_grad",
    "numeric_grad",
    "ops",
    "save_checkpoint",
]
