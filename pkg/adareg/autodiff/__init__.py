"""Reverse-mode automatic differentiation on float64 numpy arrays."""

from adareg.autodiff.tensor import ParameterRegistry, Tape, Tensor, backward, current_tape
from adareg.autodiff.gradcheck import GradCheckReport, grad_check

__all__ = [
    'ParameterRegistry',
    'Tape',
    'Tensor',
    'backward',
    'current_tape',
    'GradCheckReport',
    'grad_check',
]
