"""Minimal tensor/autodiff engine used by the neural rankers."""

from .backend import BACKEND, kernels
from .tensor import Tensor, Tape, tape_scope, active_tape
from .layers import (
    ParamStore,
    Adam,
    mlp_init,
    mlp_forward,
    positional_encoding,
    attention_init,
    attention_forward,
    grad_check,
    save_checkpoint,
    load_checkpoint,
)

__all__ = [
    "BACKEND",
    "kernels",
    "Tensor",
    "Tape",
    "tape_scope",
    "active_tape",
    "ParamStore",
    "Adam",
    "mlp_init",
    "mlp_forward",
    "positional_encoding",
    "attention_init",
    "attention_forward",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]
