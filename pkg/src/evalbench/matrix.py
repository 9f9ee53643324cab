"""
Training-setting matrix and data-ratio ablation.

Conditions, all under the same optimizer-step budget, data and evaluation:

    A  robot-only           dense FFN, stage 1 for the full budget
    B  robot + reasoning    dense FFN, stage 1 with reasoning, full budget
    C  dense co-training    dense FFN, stage 1 then stage 2 (half each, 1:3)
    D  ChatVLA              MoE, stage 1 then stage 2 (half each, 1:3)

Each condition follows the setup / execute / cleanup lifecycle and run()
returns {"success", "details", "error", "duration"}.
"""

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, Union

from src.evalbench.report import MatrixReport
from src.evalbench.rollouts import run_control_eval
from src.evalbench.vqa import OVERALL, run_vqa_eval
from src.trainer.checkpoint import Checkpoint
from src.trainer.config import TrainConfig
from src.trainer.phased import train_stage1, train_stage2
from src.utils.config_loader import RunConfig
from src.utils.logger import setup_logger
from src.worldsim.datasets import RobotDataset, VTDataset, gen_demonstrations
from src.worldsim.questions import gen_vt_samples
from src.worldsim.tasks import resolve_task_ids

logger = setup_logger()

MIN_MATRIX_SEEDS = 3
ABLATION_RATIOS = ((1, 1), (3, 1), (1, 3))


class FairnessError(ValueError):
    """Raised when matrix conditions do not share budget, data or model size"""

    pass


@dataclass(frozen=True)
class MatrixData:
    robot: RobotDataset
    vt: VTDataset
    seed: int

    @property
    def fingerprint(self) -> str:
        return f"seed={self.seed} episodes={len(self.robot)} steps={self.robot.n_steps} vt={len(self.vt)}"


@dataclass(frozen=True)
class Budget:
    total_steps: int
    batch_size: int
    learning_rate: float
    data: str
    model: Tuple[Tuple[str, Any], ...]


def build_matrix_data(run_config: RunConfig) -> MatrixData:
    """One robot set (with reasoning) and one vt set shared by every condition."""
    data = run_config.data
    robot = gen_demonstrations(resolve_task_ids(data.tasks), data.n_per_task, True, data.seed)
    vt = VTDataset(gen_vt_samples(data.n_vt, data.seed))
    return MatrixData(robot, vt, data.seed)


class BaseCondition(ABC):
    key = "?"
    label = "condition"

    def __init__(self, run_config: RunConfig, seed: int, data: MatrixData, log_dir: Optional[Path] = None):
        self.run_config = run_config
        self.seed = seed
        self.data = data
        self.log_dir = Path(log_dir) if log_dir else None
        self.stage_configs: List[TrainConfig] = self.plan(
            replace(run_config.train, seed=seed, stage=1)
        )
        self.checkpoint: Optional[Checkpoint] = None
        self.metrics: Dict[str, float] = {}
        self.logger = logger

    @abstractmethod
    def plan(self, base: TrainConfig) -> List[TrainConfig]:
        """Train configs of the stages this condition runs, in order"""
        pass

    @abstractmethod
    def execute(self):
        """Train; leaves the final checkpoint in self.checkpoint"""
        pass

    def setup(self):
        self.logger.info(
            f"Condition {self.key} ({self.label}), seed {self.seed}: "
            + " + ".join(f"stage {c.stage} x{c.total_steps}" for c in self.stage_configs)
        )

    def cleanup(self):
        self.checkpoint = None

    def budget(self) -> Budget:
        first = self.stage_configs[0]
        model = replace(self.run_config.model, moe_enabled=False).to_dict()
        return Budget(
            total_steps=sum(c.total_steps for c in self.stage_configs),
            batch_size=first.batch_size,
            learning_rate=first.learning_rate,
            data=self.data.fingerprint,
            model=tuple(sorted(model.items())),
        )

    def log_path(self, stage: int) -> Optional[Path]:
        if self.log_dir is None:
            return None
        return self.log_dir / f"{self.key}_seed{self.seed}_stage{stage}.jsonl"

    def evaluate(self) -> Dict[str, float]:
        ev = self.run_config.eval
        control = run_control_eval(
            self.checkpoint, self.run_config.data.tasks, ev.n_trials, ev.seed, ev.step_budget
        )
        vqa = run_vqa_eval(self.checkpoint, ev.n_vqa, ev.seed, ev.vqa_mode)
        return {
            "vqa_accuracy": vqa[OVERALL],
            "avg_len": control.mean_avg_len,
            "success_rate": control.overall_success,
        }

    def run(self) -> Dict[str, Any]:
        """Run the complete condition"""
        start_time = time.perf_counter()
        result = {"success": False, "details": None, "error": None, "duration": 0}
        try:
            self.logger.info(f"Starting condition: {self.key} ({self.label})")
            self.setup()
            self.execute()
            self.metrics = self.evaluate()
            result.update({"success": True, "details": dict(self.metrics)})
        except Exception as e:
            self.logger.error(f"Condition {self.key} seed {self.seed} failed: {str(e)}")
            result.update({"success": False, "error": str(e)})
        finally:
            try:
                self.cleanup()
            except Exception as e:
                self.logger.error(f"Cleanup failed: {str(e)}")
            result["duration"] = round(time.perf_counter() - start_time, 2)
        return result


class RobotOnlyCondition(BaseCondition):
    key = "A"
    label = "robot-only"
    with_reasoning = False

    def plan(self, base: TrainConfig) -> List[TrainConfig]:
        return [replace(base, moe_enabled=False, with_reasoning=self.with_reasoning)]

    def execute(self):
        config = self.stage_configs[0]
        self.checkpoint = train_stage1(
            config, self.data.robot, model_config=self.run_config.model, log_path=self.log_path(1)
        )


class RobotReasoningCondition(RobotOnlyCondition):
    key = "B"
    label = "robot + reasoning"
    with_reasoning = True


class PhasedCondition(BaseCondition):
    key = "D"
    label = "ChatVLA"
    moe_enabled = True

    def __init__(self, *args, ratio: Optional[Tuple[int, int]] = None, **kwargs):
        self.ratio = tuple(ratio) if ratio else (1, 3)
        super().__init__(*args, **kwargs)

    def plan(self, base: TrainConfig) -> List[TrainConfig]:
        first = base.total_steps // 2
        stage1 = replace(base, stage=1, total_steps=first, moe_enabled=self.moe_enabled, with_reasoning=True)
        stage2 = replace(
            stage1, stage=2, total_steps=base.total_steps - first, vt_to_robot_ratio=self.ratio
        )
        return [stage1, stage2]

    def execute(self):
        stage1, stage2 = self.stage_configs
        ckpt = train_stage1(
            stage1, self.data.robot, model_config=self.run_config.model, log_path=self.log_path(1)
        )
        self.checkpoint = train_stage2(
            stage2, ckpt, self.data.robot, self.data.vt, log_path=self.log_path(2)
        )


class DenseCoTrainingCondition(PhasedCondition):
    key = "C"
    label = "dense co-training"
    moe_enabled = False


class RatioCondition(PhasedCondition):
    label = "ratio ablation"

    def __init__(self, *args, ratio: Tuple[int, int], **kwargs):
        super().__init__(*args, ratio=ratio, **kwargs)
        self.key = f"{self.ratio[0]}:{self.ratio[1]}"


CONDITIONS: Tuple[Type[BaseCondition], ...] = (
    RobotOnlyCondition,
    RobotReasoningCondition,
    DenseCoTrainingCondition,
    PhasedCondition,
)


def check_fairness(conditions: Sequence[BaseCondition]):
    """All conditions must share step budget, batch size, lr, data and model size."""
    reference = conditions[0].budget()
    for condition in conditions[1:]:
        budget = condition.budget()
        for name in ("total_steps", "batch_size", "learning_rate", "data", "model"):
            if getattr(budget, name) != getattr(reference, name):
                raise FairnessError(
                    f"condition {condition.key} {name}={getattr(budget, name)!r} differs from "
                    f"condition {conditions[0].key} ({getattr(reference, name)!r})"
                )


def _run_conditions(
    conditions: Sequence[BaseCondition], report: MatrixReport
):
    check_fairness(conditions)
    for condition in conditions:
        result = condition.run()
        if result["success"]:
            report.add(condition.key, condition.seed, result["details"])
        else:
            report.failures.append(
                {"condition": condition.key, "seed": condition.seed, "error": result["error"]}
            )


def _seed_list(seeds: Union[int, Sequence[int]]) -> List[int]:
    return list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]


def run_setting_matrix(
    base_config: RunConfig,
    seeds: Union[int, Sequence[int]],
    data: Optional[MatrixData] = None,
    conditions: Sequence[Type[BaseCondition]] = CONDITIONS,
    log_dir: Optional[Path] = None,
) -> MatrixReport:
    """
    Train and evaluate every condition for every seed. Seeds vary weight
    initialization and batch order; data is shared.
    """
    seeds = _seed_list(seeds)
    if len(seeds) < MIN_MATRIX_SEEDS:
        raise ValueError(f"setting matrix needs at least {MIN_MATRIX_SEEDS} seeds, got {len(seeds)}")
    data = data or build_matrix_data(base_config)
    report = MatrixReport(
        metadata={
            "kind": "setting_matrix",
            "seeds": seeds,
            "conditions": {cls.key: cls.label for cls in conditions},
            "data": data.fingerprint,
        }
    )
    for seed in seeds:
        instances = [cls(base_config, seed, data, log_dir=log_dir) for cls in conditions]
        report.metadata.setdefault("budget_steps", instances[0].budget().total_steps)
        _run_conditions(instances, report)
    return report


def run_ratio_ablation(
    base_config: RunConfig,
    seeds: Union[int, Sequence[int]] = 1,
    ratios: Sequence[Tuple[int, int]] = ABLATION_RATIOS,
    data: Optional[MatrixData] = None,
    log_dir: Optional[Path] = None,
) -> MatrixReport:
    """Phased MoE training at each vt:robot stage-2 ratio; VQA accuracy and Avg. Len. per ratio."""
    seeds = _seed_list(seeds)
    data = data or build_matrix_data(base_config)
    report = MatrixReport(
        metadata={
            "kind": "ratio_ablation",
            "seeds": seeds,
            "ratios": [f"{a}:{b}" for a, b in ratios],
            "data": data.fingerprint,
        }
    )
    for seed in seeds:
        instances = [
            RatioCondition(base_config, seed, data, log_dir=log_dir, ratio=tuple(r)) for r in ratios
        ]
        _run_conditions(instances, report)
    return report
