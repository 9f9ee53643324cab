"""
Closed-loop control evaluation.

Each (task, trial) gets a fresh scene from an evaluation seed. Evaluation
seeds live above EVAL_SEED_OFFSET and never collide with the training scene
seeds of gen_demonstrations.
"""

from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from src.evalbench.policies import ModelPolicy, Policy
from src.evalbench.report import EvalReport, RolloutRecord
from src.evalbench.scoring import avg_success_length, success_rate
from src.model.chatvla import ChatVLA
from src.trainer.checkpoint import Checkpoint
from src.utils.logger import setup_logger
from src.worldsim.datasets import SUBTASK_STEP_BUDGET
from src.worldsim.scene import Scene, step_env
from src.worldsim.tasks import generate_scene, get_task, resolve_task_ids

logger = setup_logger()

EVAL_SEED_OFFSET = 2**40
EVAL_SEED_STRIDE = 100000

PolicySource = Union[Policy, ChatVLA, Checkpoint]
StepCallback = Callable[[Scene, int, np.ndarray], None]


def eval_seed(base_seed: int, trial: int) -> int:
    return EVAL_SEED_OFFSET + base_seed * EVAL_SEED_STRIDE + trial


def as_policy(source: PolicySource, with_reasoning: Optional[bool] = None) -> Policy:
    """Wrap a checkpoint or model as a ModelPolicy; policies pass through."""
    if isinstance(source, Policy):
        return source
    if isinstance(source, Checkpoint):
        if with_reasoning is None:
            with_reasoning = bool(source.metadata.get("train_config", {}).get("with_reasoning", False))
        return ModelPolicy(source.to_model(), with_reasoning)
    if isinstance(source, ChatVLA):
        return ModelPolicy(source, bool(with_reasoning))
    raise TypeError(f"Cannot evaluate a {type(source).__name__} as a policy")


def rollout_episode(
    policy: Policy,
    task_id: str,
    seed: int,
    step_budget: int = SUBTASK_STEP_BUDGET,
    on_step: Optional[StepCallback] = None,
) -> RolloutRecord:
    """
    Run one trial. Sub-task predicates are checked after every env step and
    the episode halts at the first sub-task not reached within step_budget.
    """
    spec = get_task(task_id)
    scene = generate_scene(task_id, seed)
    policy.reset(task_id, seed)
    success: List[bool] = []
    steps = 0

    for k in range(spec.n_subtasks):
        used = 0
        while not spec.is_done(scene, k) and used < step_budget:
            action = np.asarray(policy.act(scene, spec, k), dtype=np.float64)
            scene = step_env(scene, action)
            used += 1
            steps += 1
            if on_step is not None:
                on_step(scene, k, action)
        done = spec.is_done(scene, k)
        success.append(done)
        if not done:
            break

    success += [False] * (spec.n_subtasks - len(success))
    return RolloutRecord(task_id, seed, tuple(success), steps)


def run_control_eval(
    source: PolicySource,
    task_ids: Sequence[str],
    n_trials: int,
    seed: int,
    step_budget: int = SUBTASK_STEP_BUDGET,
    with_reasoning: Optional[bool] = None,
) -> EvalReport:
    policy = as_policy(source, with_reasoning)
    task_ids = resolve_task_ids(task_ids)
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")

    task_success: Dict[str, float] = {}
    task_avg_len: Dict[str, float] = {}
    step_counts: Dict[str, List[int]] = {}
    records: List[RolloutRecord] = []
    solved_total = 0

    for task_id in task_ids:
        n_subtasks = get_task(task_id).n_subtasks
        counts = [0] * n_subtasks
        solved = 0
        for trial in range(n_trials):
            record = rollout_episode(policy, task_id, eval_seed(seed, trial), step_budget)
            records.append(record)
            for k, ok in enumerate(record.success):
                counts[k] += int(ok)
            solved += int(record.solved)
        task_success[task_id] = success_rate(solved, n_trials)
        task_avg_len[task_id] = avg_success_length(counts, n_trials)
        step_counts[task_id] = counts
        solved_total += solved
        logger.info(
            f"[{policy.name}] {task_id}: success {solved}/{n_trials}, "
            f"avg len {task_avg_len[task_id]:.3f}"
        )

    metadata = {
        "policy": policy.name,
        "n_trials": n_trials,
        "seed": seed,
        "step_budget": step_budget,
        "eval_seeds": [eval_seed(seed, 0), eval_seed(seed, n_trials - 1)],
    }
    if isinstance(source, Checkpoint):
        metadata["checkpoint"] = source.checksum()[:16]
    return EvalReport(
        task_success=task_success,
        task_avg_len=task_avg_len,
        step_counts=step_counts,
        trials={t: n_trials for t in task_ids},
        overall_success=success_rate(solved_total, n_trials * len(task_ids)),
        metadata=metadata,
        records=records,
    )
