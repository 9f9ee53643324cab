"""
Adam with per-parameter state and parameter groups.

Each parameter keeps its own moment estimates and step count, so a step
that leaves a parameter out (it is not in the active set, or received no
gradient) changes neither its value nor its state.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from src.model.params import GROUPS, param_group
from src.tensor_core import Tensor
from src.trainer.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS


@dataclass
class ParamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class ParamGroup:
    name: str
    lr: float
    params: List[str] = field(default_factory=list)


class Adam:
    def __init__(
        self,
        params: "OrderedDict[str, Tensor]",
        lr: float,
        grad_clip: Optional[float] = 1.0,
        groups: Iterable[str] = GROUPS,
    ):
        self.params = params
        self.grad_clip = grad_clip
        self.groups: Dict[str, ParamGroup] = {g: ParamGroup(g, lr) for g in groups}
        self.state: Dict[str, ParamState] = {}
        for name, tensor in params.items():
            group = param_group(name)
            if group not in self.groups:
                continue
            self.groups[group].params.append(name)
            self.state[name] = ParamState(np.zeros_like(tensor.data), np.zeros_like(tensor.data))

    def lr_of(self, name: str) -> float:
        return self.groups[param_group(name)].lr

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.grad = None

    def grad_norm(self, names: Iterable[str]) -> float:
        total = 0.0
        for name in names:
            grad = self.params[name].grad
            if grad is not None:
                total += float(np.sum(grad * grad))
        return math.sqrt(total)

    def step(self, active: Iterable[str]) -> float:
        """
        Update only the active parameters that hold a gradient. Gradients are
        clipped to global norm grad_clip over that set. Returns the pre-clip norm.
        """
        names = [n for n in active if n in self.state and self.params[n].grad is not None]
        norm = self.grad_norm(names)
        factor = 1.0
        if self.grad_clip and norm > self.grad_clip:
            factor = self.grad_clip / norm

        for name in names:
            tensor = self.params[name]
            state = self.state[name]
            grad = tensor.grad * factor
            state.step += 1
            state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
            state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = state.m / (1.0 - ADAM_BETA1 ** state.step)
            v_hat = state.v / (1.0 - ADAM_BETA2 ** state.step)
            tensor.data = tensor.data - self.lr_of(name) * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        return norm

    def state_tensors(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, state in self.state.items():
            out[f"optim.m.{name}"] = state.m
            out[f"optim.v.{name}"] = state.v
        return out

    def state_steps(self) -> Dict[str, int]:
        return {name: state.step for name, state in self.state.items()}

    def load_state(self, tensors: Dict[str, np.ndarray], steps: Dict[str, int]):
        for name, state in self.state.items():
            if f"optim.m.{name}" in tensors:
                state.m = np.array(tensors[f"optim.m.{name}"], dtype=np.float64)
                state.v = np.array(tensors[f"optim.v.{name}"], dtype=np.float64)
                state.step = int(steps.get(name, 0))
