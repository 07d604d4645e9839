"""
Layers Module
Dense, convolution, batch normalization, global average pooling and clipping.

Layers are parameter containers; their forward functions build tape nodes
through :mod:`adareg.autodiff.ops`. Each layer registers its trainable arrays
with a (layer kind, field kind) descriptor that the regularizer uses to
assign a category.
"""

from typing import Optional

import numpy as np

from adareg.autodiff import ops
from adareg.autodiff.tensor import ParameterRegistry, Tensor
from adareg.utils.exceptions import ShapeError, ValidationError


class DenseLayer:
    """Fully-connected layer ``x @ kernel (+ bias)``."""

    def __init__(self, in_features: int, out_features: int, bias: bool = False,
                 rng: Optional[np.random.Generator] = None, init_std: float = 0.01):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.kernel = Tensor(rng.normal(0.0, init_std, size=(in_features, out_features)))
        self.bias = Tensor(np.zeros(out_features)) if bias else None

    def register(self, registry: ParameterRegistry, prefix: str) -> None:
        registry.register(f"{prefix}.kernel", self.kernel, descriptor=('dense', 'kernel'))
        if self.bias is not None:
            registry.register(f"{prefix}.bias", self.bias, descriptor=('dense', 'bias'))

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != layer.in_features:
        raise ShapeError(f"dense layer expects Bx{layer.in_features} input, got {x.shape}")
    out = ops.matmul(x, layer.kernel)
    if layer.bias is not None:
        out = ops.add(out, layer.bias)
    return out


class Conv2D:
    """2-D cross-correlation with zero padding and optional per-channel bias."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, pad: int = 0, bias: bool = True,
                 rng: Optional[np.random.Generator] = None,
                 bias_init: str = 'zeros', bias_std: float = 0.1):
        if stride < 1 or pad < 0 or kernel_size < 1:
            raise ValidationError(
                f"invalid conv geometry: kernel={kernel_size} stride={stride} pad={pad}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.pad = pad
        fan_in = in_channels * kernel_size * kernel_size
        self.kernel = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                        size=(out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = None
        if bias:
            if bias_init == 'normal':
                self.bias = Tensor(rng.normal(0.0, bias_std, size=out_channels))
            else:
                self.bias = Tensor(np.zeros(out_channels))

    def register(self, registry: ParameterRegistry, prefix: str) -> None:
        registry.register(f"{prefix}.kernel", self.kernel, descriptor=('conv', 'kernel'))
        if self.bias is not None:
            registry.register(f"{prefix}.bias", self.bias, descriptor=('conv', 'bias'))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_forward(self, x)


def conv2d_forward(layer: Conv2D, x: Tensor, add_bias: bool = True) -> Tensor:
    out = ops.conv2d(x, layer.kernel, stride=layer.stride, pad=layer.pad)
    if add_bias and layer.bias is not None:
        out = ops.add(out, layer.bias)
    return out


class BatchNorm:
    """Batch normalization over every axis but the channel axis.

    ``mode`` is 'train' (batch statistics, running stats updated by EMA) or
    'infer' (running statistics only). Running stats are not trainable.
    """

    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ValidationError(f"batch norm momentum must be in (0, 1), got {momentum}")
        if epsilon <= 0:
            raise ValidationError(f"batch norm epsilon must be > 0, got {epsilon}")
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Tensor(np.ones(channels))
        self.beta = Tensor(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.mode = 'train'

    def register(self, registry: ParameterRegistry, prefix: str) -> None:
        registry.register(f"{prefix}.gamma", self.gamma, descriptor=('batchnorm', 'gamma'))
        registry.register(f"{prefix}.beta", self.beta, descriptor=('batchnorm', 'beta'))

    def __call__(self, x: Tensor, shift: Optional[Tensor] = None) -> Tensor:
        return batchnorm_forward(self, x, shift)


def batchnorm_forward(layer: BatchNorm, x: Tensor, shift: Optional[Tensor] = None) -> Tensor:
    """Normalize ``x + shift``; ``shift`` is the bias of a preceding layer, if any."""
    if layer.mode == 'train':
        out, mean, var = ops.batch_norm(x, layer.gamma, layer.beta, layer.epsilon, shift=shift)
        m = layer.momentum
        layer.running_mean = (1.0 - m) * layer.running_mean + m * mean
        layer.running_var = (1.0 - m) * layer.running_var + m * var
        return out
    if layer.mode == 'infer':
        out, _, _ = ops.batch_norm(x, layer.gamma, layer.beta, layer.epsilon,
                                   mean=layer.running_mean, var=layer.running_var, shift=shift)
        return out
    raise ValidationError(f"unknown batch norm mode '{layer.mode}'")


class ClipLayer:
    """Element-wise clipping to the closed interval [lo, hi]."""

    def __init__(self, lo: float = 0.0, hi: float = 6.0):
        if not lo < hi:
            raise ValidationError(f"clip interval needs lo < hi, got [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi

    def __call__(self, x: Tensor) -> Tensor:
        return ops.clamp(x, self.lo, self.hi)


def gap_forward(x: Tensor) -> Tensor:
    """Global average pooling: NCHW -> NxC."""
    if x.ndim != 4:
        raise ShapeError(f"global average pooling needs NCHW input, got {x.shape}")
    return ops.reduce_mean(x, axes=(2, 3))
