"""Minimal reverse-mode autodiff on numpy arrays."""
from . import ops
from .gradcheck import GradCheckReport, NonDeterministicFunction, grad_check
from .optim import AdamState, NonFiniteGradient, adam_step, clip_grad_norm, zero_grad
from .tensor import Tape, Tensor, active_tape, backward, default_dtype, grad_enabled, no_grad, precision

__all__ = [
    "ops", "Tensor", "Tape", "backward", "no_grad", "precision", "grad_enabled",
    "active_tape", "default_dtype", "grad_check", "GradCheckReport",
    "NonDeterministicFunction", "AdamState", "adam_step", "clip_grad_norm",
    "zero_grad", "NonFiniteGradient",
]
