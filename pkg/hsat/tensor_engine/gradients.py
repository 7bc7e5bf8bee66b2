from typing import Callable, Tuple, Union

import numpy as np

from hsat.tensor_engine.tensor import ShapeError, Tape, TapeError, Tensor, no_grad

Objective = Callable[[Tensor], Tensor]


def value_and_grad(f: Objective, x: Union[Tensor, np.ndarray]) -> Tuple[float, np.ndarray]:
    """Evaluate the scalar objective f at x and return its value and gradient with respect to x.

    The gradient is taken on a fresh leaf, so nothing but that leaf receives a grad.
    """
    leaf = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    with Tape() as tape:
        loss = f(leaf)
    if loss.size != 1:
        raise ShapeError(f'value_and_grad: objective must be scalar, got shape {loss.shape}')
    tape.backward(loss, wrt=[leaf])
    grad = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
    return loss.item(), grad


def grad_wrt_input(f: Objective, x: Tensor) -> Tensor:
    if not x.requires_grad:
        raise TapeError('grad_wrt_input: input must be marked requires_grad')
    previous = x.grad
    x.grad = None
    try:
        with Tape() as tape:
            loss = f(x)
        if loss.size != 1:
            raise ShapeError(f'grad_wrt_input: loss must be scalar, got shape {loss.shape}')
        tape.backward(loss, wrt=[x])
        grad = x.grad if x.grad is not None else np.zeros(x.shape)
    finally:
        x.grad = previous
    return Tensor(grad)


def numerical_jvp(f: Callable[[Tensor], Tensor], x: np.ndarray, direction: np.ndarray, h: float = 1e-5) -> float:
    """Central finite difference of the scalar f along direction at x."""
    with no_grad():
        upper = f(Tensor(x + h * direction)).item()
        lower = f(Tensor(x - h * direction)).item()
    return (upper - lower) / (2.0 * h)


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
