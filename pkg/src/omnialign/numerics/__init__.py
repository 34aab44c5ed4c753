from . import ops
from .gradcheck import gradcheck
from .nn import MLP, LayerNorm, Linear, Module, Parameter
from .optim import AdamW, clip_grad_norm, warmup_cosine_lr
from .tensor import NonFiniteError, ShapeError, Tensor, finite_checks, is_grad_enabled, no_grad

__all__ = [
    "AdamW", "LayerNorm", "Linear", "MLP", "Module", "NonFiniteError", "Parameter", "ShapeError",
    "Tensor", "clip_grad_norm", "finite_checks", "gradcheck", "is_grad_enabled", "no_grad", "ops",
    "warmup_cosine_lr",
]
