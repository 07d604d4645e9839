"""Differentiable operations.

Each op computes its forward value with numpy and, when a tape is active and
at least one input is tracked, records a closure returning the exact analytic
gradient for every input. Binary ops accept identical shapes, or a rank-1
right operand broadcast along the channel axis (axis 1) of a rank-2 or rank-4
left operand.
"""

from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from adareg.autodiff.tensor import Tensor, as_tensor, current_tape
from adareg.utils.exceptions import ShapeError, ValidationError

Axes = Optional[Union[int, Sequence[int]]]


def emit(kind: str, inputs: Sequence[Tensor], data: np.ndarray,
         backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    tape = current_tape()
    if tape is None:
        return Tensor(data)
    return tape.record(kind, inputs, data, backward)


def note_branch(kind: str, pattern: np.ndarray) -> None:
    tape = current_tape()
    if tape is not None:
        tape.note_branch(kind, pattern)


def _channel_broadcast(a: Tensor, b: Tensor, op: str) -> bool:
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim in (2, 4) and a.shape[1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _expand(b: np.ndarray, ndim: int) -> np.ndarray:
    return b.reshape((1, -1) + (1,) * (ndim - 2))


def _to_channel(g: np.ndarray) -> np.ndarray:
    axes = tuple(i for i in range(g.ndim) if i != 1)
    return g.sum(axis=axes)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bcast = _channel_broadcast(a, b, 'add')
    bd = _expand(b.data, a.ndim) if bcast else b.data
    return emit('add', (a, b), a.data + bd,
                lambda g: (g, _to_channel(g) if bcast else g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bcast = _channel_broadcast(a, b, 'sub')
    bd = _expand(b.data, a.ndim) if bcast else b.data
    return emit('sub', (a, b), a.data - bd,
                lambda g: (g, -_to_channel(g) if bcast else -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bcast = _channel_broadcast(a, b, 'mul')
    ad = a.data
    bd = _expand(b.data, a.ndim) if bcast else b.data

    def backward(g):
        gb = g * ad
        return g * bd, _to_channel(gb) if bcast else gb

    return emit('mul', (a, b), ad * bd, backward)


def scale(a: Tensor, k: float) -> Tensor:
    """Multiply by a constant real."""
    a = as_tensor(a)
    k = float(k)
    return emit('scale', (a,), a.data * k, lambda g: (g * k,))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    note_branch('relu', mask)
    return emit('relu', (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return emit('exp', (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return emit('log', (a,), np.log(ad), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return emit('square', (a,), ad * ad, lambda g: (2.0 * ad * g,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Element-wise clip to [lo, hi]; gradient 1 on the closed interval, 0 outside."""
    if lo > hi:
        raise ValidationError(f"clamp: lo={lo} must be <= hi={hi}")
    a = as_tensor(a)
    ad = a.data
    below = ad < lo
    above = ad > hi
    note_branch('clamp', above.astype(np.int8) - below.astype(np.int8))
    inside = ~(below | above)
    return emit('clamp', (a,), np.clip(ad, lo, hi), lambda g: (g * inside,))


_UNARY = {'relu': relu, 'exp': exp, 'log': log, 'square': square}
_BINARY = {'add': add, 'sub': sub, 'mul': mul}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None,
                lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Dispatch an element-wise op by name."""
    if op in _BINARY:
        if b is None:
            raise ValidationError(f"elementwise '{op}' needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    if op == 'clamp':
        if lo is None or hi is None:
            raise ValidationError("elementwise 'clamp' needs lo and hi")
        return clamp(a, lo, hi)
    raise ValidationError(f"unknown elementwise op '{op}'")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return emit('matmul', (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def _normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} is invalid for rank {ndim}")
        normalized.append(axis % ndim)
    if len(set(normalized)) != len(normalized):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(normalized))


def reduce(op: str, t: Tensor, axes: Axes = None) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None); reduced axes are dropped."""
    if op not in ('sum', 'mean'):
        raise ValidationError(f"unknown reduction '{op}'")
    t = as_tensor(t)
    ax = _normalize_axes(axes, t.ndim)
    count = int(np.prod([t.shape[i] for i in ax])) if ax else 1
    out = t.data.sum(axis=ax)
    if op == 'mean':
        out = out / count
    kept = tuple(1 if i in ax else n for i, n in enumerate(t.shape))
    shape = t.shape

    def backward(g):
        full = np.broadcast_to(np.reshape(g, kept), shape)
        return ((full / count) if op == 'mean' else full.copy(),)

    return emit(f'reduce_{op}', (t,), np.asarray(out, dtype=np.float64), backward)


def reduce_sum(t: Tensor, axes: Axes = None) -> Tensor:
    return reduce('sum', t, axes)


def reduce_mean(t: Tensor, axes: Axes = None) -> Tensor:
    return reduce('mean', t, axes)


def sum_squares(t: Tensor) -> Tensor:
    """Sum of squares of all entries (squared Frobenius norm), as a scalar."""
    return reduce_sum(square(t))


def add_n(terms: Iterable[Tensor]) -> Tensor:
    """Left-to-right sum of scalars in the given order."""
    terms = list(terms)
    if not terms:
        raise ValidationError("add_n needs at least one term")
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    t = as_tensor(t)
    original = t.shape
    try:
        out = t.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"cannot reshape {original} to {tuple(shape)}") from e
    return emit('reshape', (t,), out, lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValidationError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return emit('concat', tensors, out, backward)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    t = as_tensor(t)
    if not 0 <= start < stop <= t.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {t.shape}")
    index = [slice(None)] * t.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = t.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return emit('slice', (t,), t.data[index].copy(), backward)


def take2d(t: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather ``t[rows[i], cols[i]]`` into a vector."""
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError(f"take2d needs a matrix, got shape {t.shape}")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = t.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return emit('take2d', (t,), t.data[rows, cols].copy(), backward)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation of an NCHW batch with an (O, C, kh, kw) kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d needs NCHW input and OCHW kernel, got {x.shape} and {kernel.shape}")
    if stride < 1 or pad < 0:
        raise ValidationError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if c != ck:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, kernel {kernel.shape}, pad {pad}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    kd = kernel.data
    out = np.tensordot(windows, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def backward(g):
        dk = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, kd[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
        return dxp[:, :, pad:pad + h, pad:pad + w], dk

    return emit('conv2d', (x, kernel), np.ascontiguousarray(out), backward)


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d needs NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial size {h}x{w} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return emit('avg_pool2d', (x,), out, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float,
               mean: Optional[np.ndarray] = None, var: Optional[np.ndarray] = None,
               shift: Optional[Tensor] = None) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize over every axis except the channel axis.

    With ``mean``/``var`` omitted, batch statistics are used (biased variance)
    and the gradient flows through them; otherwise the given statistics are
    treated as constants. ``shift`` is a per-channel offset added to ``x``
    before normalizing; with batch statistics it cancels and its gradient is
    exactly zero.

    Returns:
        (output, mean used, variance used)
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm needs BxC or NCHW input, got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm affine shapes {gamma.shape}/{beta.shape} do not match {channels} channels")
    inputs = [x, gamma, beta]
    xd = x.data
    if shift is not None:
        shift = as_tensor(shift)
        if shift.shape != (channels,):
            raise ShapeError(f"batch_norm shift shape {shift.shape} does not match {channels} channels")
        inputs.append(shift)
        xd = xd + _expand(shift.data, x.ndim)
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    train = mean is None or var is None
    if train:
        count = x.size // channels
        if count < 2:
            raise ValidationError(
                f"batch_norm in train mode needs >= 2 values per channel, got {count}")
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - _expand(mean, x.ndim)) * _expand(inv, x.ndim)
    gd = _expand(gamma.data, x.ndim)
    out = gd * xhat + _expand(beta.data, x.ndim)

    def backward(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        gx = g * gd
        if train:
            dx = _expand(inv, x.ndim) * (
                gx - gx.mean(axis=axes, keepdims=True)
                - xhat * (gx * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            dx = gx * _expand(inv, x.ndim)
        if shift is None:
            return dx, dgamma, dbeta
        dshift = np.zeros(channels) if train else _to_channel(dx)
        return dx, dgamma, dbeta, dshift

    return emit('batch_norm', inputs, out, backward), mean, var


def log_softmax(z: Tensor) -> Tensor:
    """Row-wise log-softmax with max-shift stabilization."""
    z = as_tensor(z)
    if z.ndim != 2:
        raise ShapeError(f"log_softmax needs a matrix, got {z.shape}")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return emit('log_softmax', (z,), out, backward)


def pairwise_distance(x: Tensor) -> Tensor:
    """Euclidean distance matrix between the rows of ``x``.

    The gradient of a zero distance is taken as zero.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"pairwise_distance needs a matrix, got {x.shape}")
    diff = x.data[:, None, :] - x.data[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))

    def backward(g):
        coef = np.zeros_like(dist)
        np.divide(g + g.T, dist, out=coef, where=dist > 0)
        return ((coef[:, :, None] * diff).sum(axis=1),)

    return emit('pairwise_distance', (x,), dist, backward)


def stack_scalars(terms: List[Tensor]) -> Tensor:
    """Pack scalar tensors into a vector."""
    terms = [as_tensor(t) for t in terms]
    for t in terms:
        if t.size != 1:
            raise ShapeError(f"stack_scalars needs scalars, got shape {t.shape}")
    shapes = [t.shape for t in terms]
    out = np.array([t.data.reshape(()) for t in terms], dtype=np.float64)

    def backward(g):
        return tuple(np.reshape(g[i], shapes[i]) for i in range(len(terms)))

    return emit('stack', terms, out, backward)
