"""Dense float64 tensors recorded on a define-by-run tape.

A :class:`Tape` is opened for every training step (``with Tape(registry) as
tape:``). Operations in :mod:`adareg.autodiff.ops` append one node per call
while a tape is active; :meth:`Tape.backward` then walks the nodes in reverse
append order, which is a valid reverse topological order by construction.
"""

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from adareg.utils.exceptions import ShapeError, ValidationError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Shaped row-major float64 array with an optional graph node."""

    __slots__ = ('data', 'requires_grad', 'node', 'name')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: Optional['Node'] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass(eq=False)
class Node:
    """One tape record: op kind, input node ids and the closure saving forward values."""
    tape: 'Tape'
    index: int
    kind: str
    inputs: Tuple[Optional[int], ...]
    backward: Optional[BackwardFn] = None
    param_id: Optional[str] = None


@dataclass
class ParameterEntry:
    name: str
    tensor: Tensor
    regularized: bool = True
    descriptor: Tuple[str, str] = ('', '')


class ParameterRegistry:
    """Ordered registry of trainable arrays.

    Entries flagged ``regularized`` form the set P of network parameters; the
    regularization-factor scalars are registered as trainable but unregularized.
    Registration order fixes every summation order over parameters.
    """

    def __init__(self):
        self._entries: Dict[str, ParameterEntry] = {}
        self._by_identity: Dict[int, str] = {}

    def register(self, name: str, tensor: Tensor, regularized: bool = True,
                 descriptor: Tuple[str, str] = ('', '')) -> Tensor:
        if name in self._entries:
            raise ValidationError(f"parameter '{name}' registered twice")
        if id(tensor) in self._by_identity:
            raise ValidationError(
                f"tensor already registered as '{self._by_identity[id(tensor)]}', cannot register as '{name}'"
            )
        tensor.requires_grad = True
        tensor.name = name
        self._entries[name] = ParameterEntry(name, tensor, regularized, descriptor)
        self._by_identity[id(tensor)] = name
        return tensor

    def name_of(self, tensor: Tensor) -> Optional[str]:
        return self._by_identity.get(id(tensor))

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def entry(self, name: str) -> ParameterEntry:
        return self._entries[name]

    def entries(self) -> List[ParameterEntry]:
        return list(self._entries.values())

    def regularized(self) -> List[ParameterEntry]:
        return [e for e in self._entries.values() if e.regularized]

    def items(self) -> List[Tuple[str, Tensor]]:
        return [(name, e.tensor) for name, e in self._entries.items()]


_ACTIVE_TAPE: ContextVar[Optional['Tape']] = ContextVar('adareg_active_tape', default=None)


def current_tape() -> Optional['Tape']:
    return _ACTIVE_TAPE.get()


class Tape:
    """Append-ordered computation record for one forward/backward pass."""

    def __init__(self, parameters: Optional[ParameterRegistry] = None):
        self.nodes: List[Node] = []
        self.parameters = parameters if parameters is not None else ParameterRegistry()
        self.branches: List[Tuple[str, bytes]] = []
        self._leaves: Dict[str, int] = {}
        self._token = None

    def __enter__(self) -> 'Tape':
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def _node_id(self, tensor: Tensor) -> Optional[int]:
        node = tensor.node
        if node is not None and node.tape is self:
            return node.index
        name = self.parameters.name_of(tensor)
        if name is None:
            return None
        if name not in self._leaves:
            leaf = Node(self, len(self.nodes), 'leaf', (), None, param_id=name)
            self.nodes.append(leaf)
            self._leaves[name] = leaf.index
        return self._leaves[name]

    def tracks(self, tensor: Tensor) -> bool:
        return self._node_id(tensor) is not None

    def record(self, kind: str, inputs: Sequence[Tensor], data: np.ndarray,
               backward: BackwardFn) -> Tensor:
        ids = tuple(self._node_id(t) for t in inputs)
        out = Tensor(data)
        if all(i is None for i in ids):
            return out
        node = Node(self, len(self.nodes), kind, ids, backward)
        self.nodes.append(node)
        out.node = node
        out.requires_grad = True
        return out

    def note_branch(self, kind: str, pattern: np.ndarray) -> None:
        """Record the branch taken by a non-smooth op (used to detect kinks)."""
        self.branches.append((kind, np.ascontiguousarray(pattern).tobytes()))

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Reverse pass from a scalar loss.

        Returns:
            Gradient for every registered parameter, zeros where unreachable.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: Dict[str, np.ndarray] = {
            name: np.zeros_like(tensor.data) for name, tensor in self.parameters.items()
        }
        if loss.node is None:
            return grads
        if loss.node.tape is not self:
            raise ValidationError("loss was produced on a different tape")

        pending: Dict[int, np.ndarray] = {loss.node.index: np.ones_like(loss.data)}
        for node in reversed(self.nodes[:loss.node.index + 1]):
            g = pending.pop(node.index, None)
            if g is None:
                continue
            if node.param_id is not None:
                grads[node.param_id] = grads[node.param_id] + g
                continue
            input_grads = node.backward(g)
            for input_id, input_grad in zip(node.inputs, input_grads):
                if input_id is None or input_grad is None:
                    continue
                if input_id in pending:
                    pending[input_id] = pending[input_id] + input_grad
                else:
                    pending[input_id] = input_grad
        return grads


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Functional alias for :meth:`Tape.backward`."""
    return tape.backward(loss)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
