import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from hsat.exceptions import NumericError

_state = threading.local()


class ShapeError(NumericError, ValueError):
    pass


class DomainError(NumericError, ValueError):
    pass


class TapeError(NumericError):
    pass


def _tape_stack() -> List['Tape']:
    if not hasattr(_state, 'stack'):
        _state.stack = []
    return _state.stack


def grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad():
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def current_tape() -> 'Tape':
    """Innermost open tape, or the thread's implicit tape when none is open.

    The implicit tape is replaced by a fresh one once a backward pass consumes it.
    """
    stack = _tape_stack()
    if stack:
        return stack[-1]
    implicit = getattr(_state, 'implicit', None)
    if implicit is None or implicit.consumed:
        implicit = Tape()
        _state.implicit = implicit
    return implicit


class Node:
    __slots__ = ('op', 'inputs', 'output', 'vjp', 'tape')

    def __init__(self, op: str, inputs: Tuple['Tensor', ...], output: 'Tensor',
                 vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]], tape: 'Tape'):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.tape = tape


class Tape:
    """Ordered record of the primitive operations executed while it was active.

    Adjoint rules are replayed in reverse record order by exactly one backward pass.
    """

    def __init__(self):
        self._nodes: List[Node] = []
        self._consumed = False

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, node: Node):
        if self._consumed:
            raise TapeError(f'Cannot record "{node.op}" on a consumed tape')
        self._nodes.append(node)

    def backward(self, root: 'Tensor', wrt: Optional[Iterable['Tensor']] = None):
        if self._consumed:
            raise TapeError('Tape already consumed by a previous backward pass')
        if root.size != 1:
            raise ShapeError(f'backward: root must have exactly one element, got shape {root.shape}')
        if not root.requires_grad:
            raise TapeError('backward: root does not depend on any tensor that requires grad')

        targets = None
        if wrt is not None:
            targets = {}
            for tensor in wrt:
                if not tensor.is_leaf:
                    raise TapeError('backward: gradients can only be requested for leaf tensors')
                targets[id(tensor)] = tensor

        self._consumed = True
        if root.is_leaf:
            if targets is None or id(root) in targets:
                root._accumulate(np.ones_like(root.data))
            return

        grads: Dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
        leaves: Dict[int, Tensor] = {}
        for node in reversed(self._nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(node.inputs, node.vjp(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + input_grad if key in grads else input_grad
                if tensor.is_leaf:
                    leaves[key] = tensor

        for key, leaf in leaves.items():
            if targets is None or key in targets:
                leaf._accumulate(grads[key])
        self._nodes.clear()


class Tensor:
    """Dense float64 array taking part in reverse-mode differentiation.

    Values are immutable after construction; only `grad` accumulates.
    """

    def __init__(self, data, *, requires_grad: bool = False):
        array = np.array(data, dtype=np.float64)
        if any(extent <= 0 for extent in array.shape):
            raise ShapeError(f'Tensor: every extent must be positive, got shape {array.shape}')
        array.flags.writeable = False
        self._data = array
        self._requires_grad = requires_grad
        self._node: Optional[Node] = None
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> 'Tensor':
        tensor = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        if not array.flags.c_contiguous:
            array = array.copy()
        array.flags.writeable = False
        tensor._data = array
        tensor._requires_grad = requires_grad
        tensor._node = None
        tensor.grad = None
        return tensor

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    @property
    def tape(self) -> Optional[Tape]:
        return self._node.tape if self._node is not None else None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f'item: tensor has shape {self.shape}, expected one element')
        return float(self._data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def detach(self) -> 'Tensor':
        return Tensor._wrap(self._data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def _accumulate(self, grad: np.ndarray):
        grad = np.array(np.broadcast_to(grad, self.shape), dtype=np.float64)
        self.grad = grad if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape}, requires_grad={self._requires_grad})'

    def __add__(self, other):
        from hsat.tensor_engine import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from hsat.tensor_engine import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from hsat.tensor_engine import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from hsat.tensor_engine import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from hsat.tensor_engine import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from hsat.tensor_engine import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from hsat.tensor_engine import ops
        return ops.div(self, other)

    def __matmul__(self, other):
        from hsat.tensor_engine import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from hsat.tensor_engine import ops
        return ops.scalar_mul(self, -1.0)


def backward(root: Tensor):
    if root.tape is None:
        if root.requires_grad:
            current_tape().backward(root)
            return
        raise TapeError('backward: root does not depend on any tensor that requires grad')
    root.tape.backward(root)
