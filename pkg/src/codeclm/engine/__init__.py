from .tensor import NumericError, Tensor, no_grad, set_finite_checks
from . import ops
from .optim import Adam, clip_global_norm, uniform_init
from .gradcheck import gradcheck

__all__ = [
    "Adam",
    "NumericError",
    "Tensor",
    "clip_global_norm",
    "gradcheck",
    "no_grad",
    "ops",
    "set_finite_checks",
    "uniform_init",
]
