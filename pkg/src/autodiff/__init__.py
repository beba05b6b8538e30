"""Minimal float64 reverse-mode autodiff with Adam."""

from .tensor import Tensor, Tape, Gradients, as_tensor, constant, backward, set_debug, debug_enabled
from .params import ParamStore, AdamState, FORMAT_VERSION
from .optim import AdamHyper, adam_step
from .gradcheck import GradCheckReport, grad_check
from . import ops

__all__ = [
    'Tensor', 'Tape', 'Gradients', 'as_tensor', 'constant', 'backward', 'set_debug', 'debug_enabled',
    'ParamStore', 'AdamState', 'FORMAT_VERSION',
    'AdamHyper', 'adam_step',
    'GradCheckReport', 'grad_check',
    'ops',
]
