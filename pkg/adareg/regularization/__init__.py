"""Adaptive L2 regularization factors and their analysis."""

from adareg.regularization.factors import (
    RegFactor,
    adaptive_penalty,
    build_factors,
    classify_category,
    constant_penalty,
    hard_sigmoid,
    lambda_of,
    regularization_penalty,
    unconstrained_penalty,
)
from adareg.regularization.analysis import RegSnapshot, factor_histogram, median_trajectory

__all__ = [
    'RegFactor',
    'RegSnapshot',
    'adaptive_penalty',
    'build_factors',
    'classify_category',
    'constant_penalty',
    'factor_histogram',
    'hard_sigmoid',
    'lambda_of',
    'median_trajectory',
    'regularization_penalty',
    'unconstrained_penalty',
]
