from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class StageError(ValueError):
    """Raised when a training call violates its stage contract"""

    pass


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    vt_to_robot_ratio: Tuple[int, int] = (1, 3)
    learning_rate: float = 2e-4
    batch_size: int = 16
    total_steps: int = 2000
    seed: int = 0
    with_reasoning: bool = True
    moe_enabled: bool = True
    freeze_attention_stage1: bool = False
    reasoning_weight: float = 1.0
    grad_clip: float = 1.0
    reset_optimizer_stage2: bool = True
    log_every: int = 10

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise StageError(f"stage must be 1 or 2, got {self.stage}")
        ratio = tuple(self.vt_to_robot_ratio)
        if len(ratio) != 2 or min(ratio) < 1:
            raise StageError(f"vt_to_robot_ratio components must be >= 1, got {ratio}")
        object.__setattr__(self, "vt_to_robot_ratio", (int(ratio[0]), int(ratio[1])))
        if self.learning_rate <= 0:
            raise StageError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.total_steps < 0:
            raise StageError(
                f"batch_size={self.batch_size} and total_steps={self.total_steps} "
                f"must be positive"
            )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["vt_to_robot_ratio"] = list(self.vt_to_robot_ratio)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        data["vt_to_robot_ratio"] = tuple(data["vt_to_robot_ratio"])
        return cls(**data)
