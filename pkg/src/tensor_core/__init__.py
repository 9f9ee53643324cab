"""
Minimal float64 tensor engine with reverse-mode differentiation
"""

from src.tensor_core import ops
from src.tensor_core.gradcheck import check_gradients, finite_diff_check
from src.tensor_core.tensor import (
    ComputeGraph,
    GraphNode,
    ShapeError,
    Tensor,
    backward,
    grad_enabled,
    no_grad,
)

__all__ = [
    "ComputeGraph",
    "GraphNode",
    "ShapeError",
    "Tensor",
    "backward",
    "check_gradients",
    "finite_diff_check",
    "grad_enabled",
    "no_grad",
    "ops",
]
