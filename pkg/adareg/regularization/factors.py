"""
Regularization Factors Module
Trainable per-parameter L2 factors lambda_n = A * hard_sigmoid(theta_n).

Every regularized parameter array w_n gets one scalar theta_n. The penalty
added to the objective is sum_n A * f(theta_n) * ||w_n||^2, so theta_n is
trained by the same backward pass as the weights. The hard sigmoid keeps
every factor inside [0, A]; letting theta_n act as the factor directly (the
unconstrained ablation) rewards weight growth and the model collapses.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from adareg.autodiff import ops
from adareg.autodiff.tensor import ParameterRegistry, Tensor
from adareg.config.run_config import CATEGORIES
from adareg.utils.exceptions import ValidationError

_TAXONOMY = {
    ('conv', 'kernel'): 'conv_kernel',
    ('conv', 'bias'): 'conv_bias',
    ('batchnorm', 'gamma'): 'bn_gamma',
    ('batchnorm', 'beta'): 'bn_beta',
    ('dense', 'kernel'): 'dense_kernel',
}


def hard_sigmoid(x, c=2.5):
    """0 below -c, 1 above c, x/(2c) + 0.5 on [-c, c].

    Element-wise for arrays; a float for scalar inputs.
    """
    c = np.asarray(c, dtype=np.float64)
    if np.any(c <= 0):
        raise ValidationError(f"hard sigmoid half-width c must be > 0, got {c.min()}")
    out = np.clip(np.asarray(x, dtype=np.float64) / (2.0 * c) + 0.5, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def hard_sigmoid_derivative(x: float, c: float = 2.5) -> float:
    if c <= 0:
        raise ValidationError(f"hard sigmoid half-width c must be > 0, got {c}")
    return 0.0 if (x < -c or x > c) else 1.0 / (2.0 * c)


def hard_sigmoid_op(x: Tensor, c: float = 2.5) -> Tensor:
    """Tape version of :func:`hard_sigmoid`; the ±c boundary uses the linear branch."""
    if c <= 0:
        raise ValidationError(f"hard sigmoid half-width c must be > 0, got {c}")
    xd = x.data
    below = xd < -c
    above = xd > c
    ops.note_branch('hard_sigmoid', above.astype(np.int8) - below.astype(np.int8))
    inside = ~(below | above)
    out = np.where(below, 0.0, np.where(above, 1.0, xd / (2.0 * c) + 0.5))
    slope = inside / (2.0 * c)
    return ops.emit('hard_sigmoid', (x,), out, lambda g: (g * slope,))


@dataclass
class RegFactor:
    """Trainable factor attached to exactly one regularized parameter array."""
    theta: Tensor
    amplitude: float
    half_width: float
    category: str
    param_id: str

    @property
    def value(self) -> float:
        return lambda_of(self)


def lambda_of(r: RegFactor) -> float:
    return r.amplitude * hard_sigmoid(r.theta.item(), r.half_width)


def lambda_tensor(r: RegFactor) -> Tensor:
    return ops.scale(hard_sigmoid_op(r.theta, r.half_width), r.amplitude)


def classify_category(descriptor: Tuple[str, str], dense_bias_category: str = '') -> str:
    """Map a (layer kind, field kind) descriptor onto the five-way taxonomy.

    Dense biases are outside the taxonomy unless ``dense_bias_category`` maps them.
    """
    if descriptor in _TAXONOMY:
        return _TAXONOMY[descriptor]
    if descriptor == ('dense', 'bias'):
        if dense_bias_category:
            if dense_bias_category not in CATEGORIES:
                raise ValidationError(f"unknown category '{dense_bias_category}' for dense bias")
            return dense_bias_category
        raise ValidationError(
            "dense bias is outside the conv_kernel/conv_bias/bn_gamma/bn_beta/dense_kernel "
            "taxonomy; map it with reg.map_dense_bias")
    raise ValidationError(f"cannot classify parameter descriptor {descriptor!r}")


def build_factors(registry: ParameterRegistry, amplitude: float = 0.0025,
                  half_width: float = 2.5, theta_init: float = 0.0,
                  dense_bias_category: str = '') -> List[RegFactor]:
    """Create and register one theta scalar per regularized parameter.

    Thetas are registered as ``<param>.theta`` and are themselves unregularized.
    """
    if amplitude <= 0:
        raise ValidationError(f"amplitude must be > 0, got {amplitude}")
    if half_width <= 0:
        raise ValidationError(f"half-width must be > 0, got {half_width}")
    factors = []
    for entry in registry.regularized():
        category = classify_category(entry.descriptor, dense_bias_category)
        theta = registry.register(f"{entry.name}.theta", Tensor(theta_init),
                                  regularized=False, descriptor=('factor', 'theta'))
        factors.append(RegFactor(theta, amplitude, half_width, category, entry.name))
    return factors


def _ordered_factors(registry: ParameterRegistry, factors: Sequence[RegFactor]) -> List[RegFactor]:
    by_param: Dict[str, RegFactor] = {}
    for factor in factors:
        if factor.param_id not in registry or not registry.entry(factor.param_id).regularized:
            raise ValidationError(f"factor references unknown parameter '{factor.param_id}'")
        if factor.param_id in by_param:
            raise ValidationError(f"parameter '{factor.param_id}' has more than one factor")
        by_param[factor.param_id] = factor
    missing = [e.name for e in registry.regularized() if e.name not in by_param]
    if missing:
        raise ValidationError(f"parameters without a regularization factor: {', '.join(missing)}")
    return [by_param[e.name] for e in registry.regularized()]


def _sum_or_zero(terms: List[Tensor]) -> Tensor:
    return ops.add_n(terms) if terms else Tensor(0.0)


def adaptive_penalty(registry: ParameterRegistry, factors: Sequence[RegFactor]) -> Tensor:
    """sum_n A f(theta_n) ||w_n||^2, summed in registration order."""
    terms = [ops.mul(lambda_tensor(f), ops.sum_squares(registry[f.param_id]))
             for f in _ordered_factors(registry, factors)]
    return _sum_or_zero(terms)


def constant_penalty(registry: ParameterRegistry, lam: float) -> Tensor:
    """lambda * sum_n ||w_n||^2 with a fixed factor."""
    if lam < 0:
        raise ValidationError(f"constant regularization factor must be >= 0, got {lam}")
    terms = [ops.scale(ops.sum_squares(e.tensor), lam) for e in registry.regularized()]
    return _sum_or_zero(terms)


def unconstrained_penalty(registry: ParameterRegistry, factors: Sequence[RegFactor],
                          enabled: bool = False) -> Tensor:
    """sum_n theta_n ||w_n||^2 with raw, possibly negative thetas (collapse ablation)."""
    if not enabled:
        raise ValidationError("unconstrained penalty is an ablation and must be explicitly enabled")
    terms = [ops.mul(f.theta, ops.sum_squares(registry[f.param_id]))
             for f in _ordered_factors(registry, factors)]
    return _sum_or_zero(terms)


def regularization_penalty(mode: str, registry: ParameterRegistry, factors: Sequence[RegFactor],
                           constant_lambda: float = 0.0) -> Optional[Tensor]:
    """Penalty for a regularizer mode; None when regularization is off."""
    if mode == 'adaptive':
        return adaptive_penalty(registry, factors)
    if mode == 'constant':
        return constant_penalty(registry, constant_lambda)
    if mode == 'unconstrained':
        return unconstrained_penalty(registry, factors, enabled=True)
    if mode == 'off':
        return None
    raise ValidationError(f"unknown regularizer mode '{mode}'")


def effective_lambda(factor: RegFactor, mode: str, constant_lambda: float = 0.0) -> float:
    """Factor value actually multiplying ||w_n||^2 under a regularizer mode."""
    if mode == 'adaptive':
        return lambda_of(factor)
    if mode == 'constant':
        return constant_lambda
    if mode == 'unconstrained':
        return factor.theta.item()
    return 0.0
