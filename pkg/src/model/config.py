from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict

SYSTEM_PROMPT_UNDERSTANDING = "Answer based on question"
SYSTEM_PROMPT_CONTROL = "Predict robot action"


class RoutingError(ValueError):
    """Raised when a sequence cannot be routed to an FFN expert"""

    pass


class SequenceError(ValueError):
    """Raised when a token sequence violates model limits"""

    pass


class ModelConfigError(ValueError):
    """Raised when a ModelConfig violates its invariants"""

    pass


class TaskTag(Enum):
    UNDERSTANDING = "understanding"
    CONTROL = "control"

    @classmethod
    def from_prompt(cls, prompt: str) -> "TaskTag":
        """Derive the routing tag from the system prompt text."""
        if prompt == SYSTEM_PROMPT_UNDERSTANDING:
            return cls.UNDERSTANDING
        if prompt == SYSTEM_PROMPT_CONTROL:
            return cls.CONTROL
        raise RoutingError(f"Unknown system prompt: {prompt!r}")

    @property
    def prompt(self) -> str:
        if self is TaskTag.UNDERSTANDING:
            return SYSTEM_PROMPT_UNDERSTANDING
        return SYSTEM_PROMPT_CONTROL


@dataclass(frozen=True)
class RouterDecision:
    """
    Expert index for one sequence.

    m = 0 selects the vision-language expert; 1 <= m <= n_control selects a
    control expert.
    """

    m: int
    n_control: int = 1

    def __post_init__(self):
        if self.n_control < 1:
            raise RoutingError(f"n_control must be >= 1, got {self.n_control}")
        if not 0 <= self.m <= self.n_control:
            raise RoutingError(
                f"Expert index m={self.m} out of range [0, {self.n_control}]"
            )

    @property
    def tag(self) -> TaskTag:
        return TaskTag.UNDERSTANDING if self.m == 0 else TaskTag.CONTROL

    @classmethod
    def for_tag(cls, tag: TaskTag, n_control: int = 1, control_index: int = 1):
        if tag is TaskTag.UNDERSTANDING:
            return cls(0, n_control)
        return cls(control_index, n_control)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 128
    vocab_size: int = 64
    max_seq: int = 48
    patch_size: int = 8
    image_side: int = 32
    action_dim: int = 3
    action_chunk_len: int = 4
    diffusion_steps: int = 10
    n_control_experts: int = 1
    moe_enabled: bool = True
    action_hidden: int = 128
    timestep_dim: int = 16

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "moe_enabled":
                continue
            if name == "n_layers":
                if value < 0:
                    raise ModelConfigError(f"n_layers must be >= 0, got {value}")
                continue
            if value < 1:
                raise ModelConfigError(f"{name} must be a positive integer, got {value}")
        if self.d_model % self.n_heads:
            raise ModelConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.image_side % self.patch_size:
            raise ModelConfigError(
                f"image_side={self.image_side} not divisible by patch_size={self.patch_size}"
            )
        if self.timestep_dim % 2:
            raise ModelConfigError(f"timestep_dim must be even, got {self.timestep_dim}")
        if self.n_patches >= self.max_seq:
            raise ModelConfigError(
                f"max_seq={self.max_seq} leaves no room after {self.n_patches} image tokens"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_patches(self) -> int:
        return (self.image_side // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def action_size(self) -> int:
        return self.action_chunk_len * self.action_dim

    @property
    def cond_dim(self) -> int:
        """Width of the action-head conditioning: mean-pooled plus last-position features."""
        return 2 * self.d_model

    @property
    def dense_ff(self) -> int:
        """Width of the shared FFN in the dense baseline (matches all experts)."""
        return (1 + self.n_control_experts) * self.d_ff

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        return cls(**data)
