from . import tensor as ops
from .gradcheck import grad_check
from .kernels import (
    apply_rope,
    causal_attention,
    cross_attention,
    linear,
    sinusoidal_embedding,
)
from .optim import AdamW, clip_grad_norm, cosine_lr
from .params import ParamTree, collect_grads
from .tensor import Tensor

__all__ = [
    "AdamW",
    "ParamTree",
    "Tensor",
    "apply_rope",
    "causal_attention",
    "clip_grad_norm",
    "collect_grads",
    "cosine_lr",
    "cross_attention",
    "grad_check",
    "linear",
    "ops",
    "sinusoidal_embedding",
]
