"""Reverse-mode differentiable numeric core."""
from . import tape as ops
from .adam import AdamState, adam_step
from .checkpoint import FORMAT_TAG, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numeric_gradient
from .mlp import Mlp, forward_mlp
from .params import ParameterStore
from .tape import Tape, Tensor, backward, constant

__all__ = [
    "AdamState", "FORMAT_TAG", "Mlp", "ParameterStore", "Tape", "Tensor", "adam_step", "backward",
    "check_gradients", "constant", "forward_mlp", "load_checkpoint", "numeric_gradient", "ops",
    "save_checkpoint",
]
