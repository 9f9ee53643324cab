"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every op in `src.tensor_core.ops` produces a new Tensor; when any input
requires a gradient the output records its parents and a closure mapping the
output gradient to one gradient per parent. `backward` walks the recorded
graph in reverse topological order and accumulates into leaf `.grad`.
"""

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

_GRAD_ENABLED = True
_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op"""

    def __init__(self, op: str, message: str, *shapes):
        shape_text = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: {message} (shapes: {shape_text})")
        self.op = op
        self.shapes = [tuple(s) for s in shapes]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording; ops return constants."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.id = next(_ids)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""
        self._saved: Dict[str, object] = {}

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        op: str,
        backward: BackwardFn,
        saved: Optional[Dict[str, object]] = None,
    ) -> "Tensor":
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
            out._saved = saved or {}
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    # operator sugar, dispatching to src.tensor_core.ops
    def __add__(self, other):
        from src.tensor_core import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from src.tensor_core import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from src.tensor_core import ops

        return ops.matmul(self, other)

    def __repr__(self):
        grad = "" if not self.requires_grad else ", requires_grad=True"
        return f"Tensor(shape={self.shape}{grad}{', op=' + self._op if self._op else ''})"


@dataclass(frozen=True)
class GraphNode:
    op: str
    input_ids: Tuple[int, ...]
    output_id: int


class ComputeGraph:
    """Topologically ordered op records reachable from a root tensor."""

    def __init__(self, order: List[Tensor]):
        self.order = order

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        # iterative post-order, deep models overflow the recursion limit
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in visited:
                continue
            visited.add(node.id)
            stack.append((node, True))
            for parent in node._parents:
                if parent.id not in visited:
                    stack.append((parent, False))
        return cls(order)

    @property
    def nodes(self) -> List[GraphNode]:
        return [
            GraphNode(t._op, tuple(p.id for p in t._parents), t.id)
            for t in self.order
            if not t.is_leaf
        ]

    def leaves(self) -> List[Tensor]:
        return [t for t in self.order if t.is_leaf and t.requires_grad]


def backward(loss: Tensor):
    """Accumulate dLoss/dLeaf into every reachable leaf's grad."""
    if loss.data.size != 1:
        raise ShapeError("backward", "loss must be a scalar", loss.shape)
    if not loss.requires_grad:
        return

    graph = ComputeGraph.from_root(loss)
    grads: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}

    for node in reversed(graph.order):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
