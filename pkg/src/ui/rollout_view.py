import sys
from typing import TextIO

import numpy as np

from src.evalbench.policies import ModelPolicy, Policy
from src.evalbench.report import RolloutRecord
from src.evalbench.rollouts import rollout_episode
from src.worldsim.datasets import SUBTASK_STEP_BUDGET
from src.worldsim.render import render_ascii
from src.worldsim.scene import Scene
from src.worldsim.tasks import generate_scene


def rollout_view(
    policy: Policy,
    task_id: str,
    seed: int,
    stdout: TextIO = sys.stdout,
    step_budget: int = SUBTASK_STEP_BUDGET,
) -> RolloutRecord:
    """Print an ASCII frame per env step, then the rollout's result line."""
    frames = 0
    print(f"frame 0 | task {task_id} seed {seed}", file=stdout)
    print(render_ascii(generate_scene(task_id, seed)), file=stdout)

    def show(scene: Scene, subtask: int, action: np.ndarray):
        nonlocal frames
        frames += 1
        dx, dy, grip = (float(a) for a in action)
        header = f"frame {frames} | sub-task {subtask} | action ({dx:+.2f}, {dy:+.2f}, {grip:+.2f})"
        if isinstance(policy, ModelPolicy) and policy.last_reasoning:
            header += f" | {policy.last_reasoning}"
        print(header, file=stdout)
        print(render_ascii(scene), file=stdout)

    record = rollout_episode(policy, task_id, seed, step_budget, on_step=show)
    print(f"result: {record.to_line()}", file=stdout)
    return record
