"""
Optimizer Module
SGD with heavy-ball momentum over a parameter registry.
"""

from typing import Dict, Mapping, Optional

import numpy as np

from adareg.autodiff.tensor import ParameterRegistry
from adareg.utils.exceptions import ValidationError


class SGD:
    """``v = momentum * v + g; p = p - lr * scale * v`` for every registered array.

    ``lr_scales`` multiplies the learning rate of individual parameters (the
    regularization-factor scalars use ``reg.theta_lr_scale``).
    """

    def __init__(self, registry: ParameterRegistry, momentum: float = 0.9,
                 lr_scales: Optional[Mapping[str, float]] = None):
        if not 0.0 <= momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {momentum}")
        self.registry = registry
        self.momentum = momentum
        self.lr_scales = dict(lr_scales or {})
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        if lr < 0:
            raise ValidationError(f"learning rate must be >= 0, got {lr}")
        for name, tensor in self.registry.items():
            g = grads.get(name)
            if g is None:
                continue
            if name in self.velocity and self.momentum:
                v = self.momentum * self.velocity[name] + g
            else:
                v = np.array(g, dtype=np.float64)
            self.velocity[name] = v
            rate = lr * self.lr_scales.get(name, 1.0)
            if rate == 0.0:
                continue
            tensor.data = tensor.data - rate * v
