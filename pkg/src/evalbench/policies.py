"""
Closed-loop policies evaluated by the rollout harness.

Every policy is reset with the episode seed before a trial, so a rollout is
a pure function of (policy weights, task, seed).
"""

from abc import ABC, abstractmethod
from collections import deque
from typing import Deque, Optional

import numpy as np

from src.model.chatvla import ChatVLA
from src.utils.logger import setup_logger
from src.worldsim.expert import expert_action
from src.worldsim.render import render
from src.worldsim.scene import Scene
from src.worldsim.tasks import TaskSpec

logger = setup_logger()


class Policy(ABC):
    name = "policy"

    def reset(self, task_id: str, seed: int):
        """Start a new episode"""
        pass

    @abstractmethod
    def act(self, scene: Scene, spec: TaskSpec, subtask_index: int) -> np.ndarray:
        """One action (dx, dy, grip) for the current scene"""
        pass


class ExpertPolicy(Policy):
    """The scripted demonstrator, used as the harness ceiling."""

    name = "expert"

    def act(self, scene: Scene, spec: TaskSpec, subtask_index: int) -> np.ndarray:
        return expert_action(scene, spec, subtask_index)


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, task_id: str, seed: int):
        self.rng = np.random.default_rng([self.seed, seed])

    def act(self, scene: Scene, spec: TaskSpec, subtask_index: int) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, size=3)


class ModelPolicy(Policy):
    """
    Executes sampled action chunks open-loop and re-plans when the chunk is
    used up or the sub-task changes.
    """

    name = "model"

    def __init__(self, model: ChatVLA, with_reasoning: bool = False, control_index: int = 1):
        self.model = model
        self.with_reasoning = with_reasoning
        self.control_index = control_index
        self.rng = np.random.default_rng(0)
        self.queue: Deque[np.ndarray] = deque()
        self.subtask: Optional[int] = None
        self.last_reasoning: Optional[str] = None
        self.n_plans = 0

    def reset(self, task_id: str, seed: int):
        self.rng = np.random.default_rng([seed, 5])
        self.queue.clear()
        self.subtask = None
        self.last_reasoning = None
        self.n_plans = 0

    def act(self, scene: Scene, spec: TaskSpec, subtask_index: int) -> np.ndarray:
        if subtask_index != self.subtask:
            self.queue.clear()
            self.subtask = subtask_index
        if not self.queue:
            chunk, reasoning = self.model.act(
                render(scene),
                spec.instruction(scene, subtask_index),
                rng_seed=int(self.rng.integers(2**31)),
                with_reasoning=self.with_reasoning,
                control_index=self.control_index,
            )
            self.queue.extend(np.asarray(chunk, dtype=np.float64))
            self.last_reasoning = reasoning
            self.n_plans += 1
        return self.queue.popleft()
