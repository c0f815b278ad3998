"""Minimal dense tensors, reverse-mode gradients and AdamW."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import (NonFiniteGradientError, ParamStore, adamw_step, clip_by_global_norm,
                    global_norm)
from .tensor import (ShapeError, Tensor, as_tensor, backward, default_dtype, grad, parameter,
                     precision)
from . import ops

__all__ = [
    "CheckpointError", "NonFiniteGradientError", "ParamStore", "ShapeError", "Tensor",
    "adamw_step", "as_tensor", "backward", "clip_by_global_norm", "default_dtype",
    "global_norm", "grad", "load_checkpoint", "ops", "parameter", "precision",
    "save_checkpoint",
]
