"""Primitive differentiable operations.

Every primitive computes its forward value with numpy and, when any input requires
grad, records a vector-Jacobian product on the current tape.
"""
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from hsat.tensor_engine.tensor import (DomainError, Node, ShapeError, Tensor,
                                       current_tape, grad_enabled)

Operand = Union[Tensor, np.ndarray, float, int]
Axis = Optional[Union[int, Tuple[int, ...]]]


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(op: str, inputs: Tuple[Tensor, ...], data: np.ndarray,
          vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=requires_grad)
    if requires_grad:
        tape = current_tape()
        node = Node(op, inputs, out, vjp, tape)
        tape.record(node)
        out._node = node
    return out


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f'{op}: incompatible shapes {a.shape} and {b.shape}')


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, extent in enumerate(shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _normalize_axis(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if not keepdims:
        grad = np.expand_dims(grad, _normalize_axis(axis, len(shape)))
    return np.broadcast_to(grad, shape)


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    return _emit('add', (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)
    return _emit('sub', (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    return _emit('mul', (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('div', a, b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _emit('div', (a, b), out, vjp)


def scalar_mul(a: Operand, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit('scalar_mul', (a,), a.data * c, lambda g: (g * c,))


def matmul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f'matmul: incompatible shapes {a.shape} and {b.shape}')
    return _emit('matmul', (a, b), a.data @ b.data,
                 lambda g: (g @ b.data.T, a.data.T @ g))


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv2d(x: Operand, weight: Operand, bias: Optional[Operand] = None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1. x is N x C x H x W, weight is O x C x 3 x 3."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (3, 3) or weight.shape[1] != x.shape[1]:
        raise ShapeError(f'conv2d: incompatible shapes {x.shape} and {weight.shape}')
    out_channels = weight.shape[0]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out_channels,):
            raise ShapeError(f'conv2d: incompatible shapes {weight.shape} and {bias.shape}')

    n, c, h, w = x.shape
    cols = _im2col(x.data)
    kernel = weight.data.reshape(out_channels, c * 9)
    out = (cols @ kernel.T).reshape(n, h, w, out_channels).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def vjp(g):
        flat = g.transpose(0, 2, 3, 1).reshape(n * h * w, out_channels)
        grad_weight = (flat.T @ cols).reshape(weight.shape)
        grad_cols = (flat @ kernel).reshape(n, h, w, c, 3, 3)
        grad_padded = np.zeros((n, c, h + 2, w + 2))
        for ki in range(3):
            for kj in range(3):
                grad_padded[:, :, ki:ki + h, kj:kj + w] += grad_cols[..., ki, kj].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, 1:-1, 1:-1]
        if bias is None:
            return grad_x, grad_weight
        return grad_x, grad_weight, g.sum(axis=(0, 2, 3))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit('conv2d', inputs, out, vjp)


def avgpool2d(x: Operand) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f'avgpool2d: expected N x C x H x W with even H and W, got {x.shape}')
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _emit('avgpool2d', (x,), out, vjp)


def relu(x: Operand) -> Tensor:
    x = as_tensor(x)
    # subgradient 0 at exactly 0
    mask = x.data > 0
    return _emit('relu', (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def exp(x: Operand) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _emit('exp', (x,), out, lambda g: (g * out,))


def log(x: Operand) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError(f'log: negative input (min {x.data.min()})')
    with np.errstate(divide='ignore'):
        out = np.log(x.data)
    return _emit('log', (x,), out, lambda g: (g / x.data,))


def sqrt(x: Operand) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError(f'sqrt: negative input (min {x.data.min()})')
    out = np.sqrt(x.data)
    return _emit('sqrt', (x,), out, lambda g: (g * 0.5 / out,))


def sum(x: Operand, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return _emit('sum', (x,), out, lambda g: (_expand_reduced(g, x.shape, axis, keepdims),))


def mean(x: Operand, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = int(np.prod([x.shape[a] for a in _normalize_axis(axis, x.ndim)]))
    out = np.sum(x.data, axis=axis, keepdims=keepdims) / count
    return _emit('mean', (x,), out, lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,))


def max(x: Operand, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    if axis is None:
        flat = x.data.reshape(-1)
        index = int(np.argmax(flat))
        out = flat[index].reshape((1,) * x.ndim) if keepdims else flat[index]

        def vjp(g):
            grad = np.zeros(flat.shape)
            grad[index] = np.asarray(g).reshape(-1)[0]
            return (grad.reshape(x.shape),)

        return _emit('max', (x,), np.asarray(out), vjp)

    axis = axis % x.ndim
    index = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        grad = np.zeros(x.shape)
        np.put_along_axis(grad, index, g if keepdims else np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _emit('max', (x,), out, vjp)


def logsumexp(x: Operand, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shift = np.max(x.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide='ignore'):
        kept = np.log(np.sum(np.exp(x.data - shift), axis=axis, keepdims=True)) + shift
    out = kept if keepdims else np.squeeze(kept, axis=axis)

    def vjp(g):
        g = g if keepdims else np.expand_dims(g, _normalize_axis(axis, x.ndim))
        return (g * np.exp(x.data - kept),)

    return _emit('logsumexp', (x,), out, vjp)


def gather(x: Operand, indices: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1 or (indices.size and (indices.min() < -x.shape[0] or indices.max() >= x.shape[0])):
        raise ShapeError(f'gather: indices {indices.shape} out of range for shape {x.shape}')

    def vjp(g):
        grad = np.zeros(x.shape)
        np.add.at(grad, indices, g)
        return (grad,)

    return _emit('gather', (x,), x.data[indices], vjp)


def concat(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    first = tensors[0]
    for other in tensors[1:]:
        if other.ndim != first.ndim or any(
                a != b for i, (a, b) in enumerate(zip(first.shape, other.shape)) if i != axis % first.ndim):
            raise ShapeError(f'concat: incompatible shapes {first.shape} and {other.shape}')
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _emit('concat', tensors, np.concatenate([t.data for t in tensors], axis=axis),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def reshape(x: Operand, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f'reshape: incompatible shapes {x.shape} and {shape}')
    return _emit('reshape', (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Operand, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f'transpose: axes {axes} do not match shape {x.shape}')
    inverse = tuple(np.argsort(axes))
    return _emit('transpose', (x,), x.data.transpose(axes), lambda g: (g.transpose(inverse),))


def l2_normalize(x: Operand) -> Tensor:
    """Scale every row (last axis) to unit Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise DomainError('l2_normalize: zero-norm row')
    out = x.data / norm

    def vjp(g):
        return ((g - out * np.sum(g * out, axis=-1, keepdims=True)) / norm,)

    return _emit('l2_normalize', (x,), out, vjp)
