"""Neural network layers."""

from adareg.nn.layers import (
    BatchNorm,
    ClipLayer,
    Conv2D,
    DenseLayer,
    batchnorm_forward,
    conv2d_forward,
    dense_forward,
    gap_forward,
)

__all__ = [
    'BatchNorm',
    'ClipLayer',
    'Conv2D',
    'DenseLayer',
    'batchnorm_forward',
    'conv2d_forward',
    'dense_forward',
    'gap_forward',
]
