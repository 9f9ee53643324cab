"""
Phased alignment training.

Stage 1 trains the control path on robot data only: attention (unless
frozen), embeddings, the control expert(s), the action head and, with
reasoning, the text head. The vision-language expert is never in the
active set. Stage 2 co-trains on task-pure vt and robot batches; each batch
updates the shared parameters plus its own expert and head.
"""

import time
from dataclasses import replace
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from src.model.chatvla import ChatVLA
from src.model.config import ModelConfig
from src.model.params import is_attention, select
from src.model.sequence import TokenSequence
from src.trainer.batches import (
    ROBOT,
    VT,
    Batch,
    make_mixed_batches,
    robot_batches,
    robot_sequences,
    vt_sequences,
)
from src.trainer.checkpoint import Checkpoint, CheckpointError
from src.trainer.config import StageError, TrainConfig
from src.trainer.losses import loss_control, loss_understanding
from src.trainer.optimizer import Adam
from src.utils.logger import close_json_log, setup_json_log, setup_logger
from src.worldsim.datasets import RobotDataset, VTDataset
from src.worldsim.vocab import vocab_hash

logger = setup_logger()

RobotData = Union[RobotDataset, Sequence[TokenSequence]]
VTData = Union[VTDataset, Sequence[TokenSequence]]


def active_parameters(model: ChatVLA, kind: str, config: TrainConfig, stage: int) -> List[str]:
    """Parameter names a batch of this kind may update."""
    groups = {"shared", "dense"}
    if kind == VT:
        groups |= {"expert_vl", "text_head"}
    else:
        groups |= {"expert_robot", "action_head"}
        if config.with_reasoning:
            groups.add("text_head")
    names = select(model.params, groups)
    if stage == 1 and config.freeze_attention_stage1:
        names = [n for n in names if not is_attention(n)]
    return names


class PhasedTrainer:
    def __init__(
        self,
        model: ChatVLA,
        config: TrainConfig,
        optimizer: Optional[Adam] = None,
        log_path=None,
    ):
        self.model = model
        self.config = config
        self.optimizer = optimizer or Adam(model.params, config.learning_rate, config.grad_clip)
        self.noise_rng = np.random.default_rng([config.seed, config.stage, 3])
        self.step_count = 0
        self.batch_counts: Dict[str, int] = {ROBOT: 0, VT: 0}
        self.losses: List[float] = []
        self.json_log = setup_json_log(log_path, f"stage{config.stage}") if log_path else None
        self._start = time.perf_counter()

    def train_step(self, batch: Batch) -> float:
        """Forward, backward and a local update for one task-pure batch."""
        model = self.model
        self.optimizer.zero_grad()
        seq_batch = model.collate(batch.sequences)
        if batch.kind == VT:
            loss = loss_understanding(model, seq_batch)
        else:
            loss = loss_control(
                model,
                seq_batch,
                self.noise_rng,
                with_reasoning=self.config.with_reasoning,
                reasoning_weight=self.config.reasoning_weight,
            )
        value = loss.item()
        if not np.isfinite(value):
            logger.error(f"Non-finite loss at stage {self.config.stage} step {self.step_count}")
            raise StageError(f"loss diverged at step {self.step_count}: {value}")

        loss.backward()
        active = active_parameters(model, batch.kind, self.config, self.config.stage)
        grad_norm = self.optimizer.step(active)
        self.step_count += 1
        self.batch_counts[batch.kind] += 1
        self.losses.append(value)
        self._log(batch.kind, value, grad_norm)
        return value

    def _log(self, kind: str, loss: float, grad_norm: float):
        wall = round(time.perf_counter() - self._start, 3)
        if self.json_log is not None:
            self.json_log.info(
                "train_step",
                extra={
                    "step": self.step_count,
                    "stage": self.config.stage,
                    "task": kind,
                    "loss": loss,
                    "grad_norm": grad_norm,
                    "lr": self.config.learning_rate,
                    "wall_time": wall,
                },
            )
        if self.step_count % self.config.log_every == 0 or self.step_count == self.config.total_steps:
            logger.info(
                f"stage {self.config.stage} step {self.step_count}/{self.config.total_steps} "
                f"{kind} loss {loss:.4f}"
            )

    def run(self, stream: Iterator[Batch], n_steps: int) -> "PhasedTrainer":
        try:
            for _ in range(n_steps):
                self.train_step(next(stream))
        finally:
            if self.json_log is not None:
                close_json_log(self.json_log)
        return self

    def checkpoint(self, extra: Optional[Dict] = None) -> Checkpoint:
        metadata = {
            "stage": self.config.stage,
            "step": self.step_count,
            "train_config": self.config.to_dict(),
            "batch_counts": dict(self.batch_counts),
            "rng_state": self.noise_rng.bit_generator.state,
            **(extra or {}),
        }
        return Checkpoint.from_model(self.model, metadata, self.optimizer)


def _robot_sequences(data: RobotData, model_config: ModelConfig, config: TrainConfig) -> List[TokenSequence]:
    if isinstance(data, RobotDataset):
        if config.with_reasoning and not data.with_reasoning:
            logger.warning("with_reasoning is set but the robot data carries no reasoning")
        return robot_sequences(data, model_config, config.with_reasoning, config.seed)
    return list(data)


def _vt_sequences(data: VTData) -> List[TokenSequence]:
    return vt_sequences(data) if isinstance(data, VTDataset) else list(data)


def train_stage1(
    config: TrainConfig,
    robot_data: RobotData,
    vt_data: Optional[VTData] = None,
    model_config: Optional[ModelConfig] = None,
    log_path=None,
) -> Checkpoint:
    """Stage 1: robot data only, vision-language expert frozen."""
    if config.stage != 1:
        raise StageError(f"train_stage1 needs stage=1, got {config.stage}")
    if vt_data:
        raise StageError("Stage 1 trains on robot data only; vt data was supplied")

    model_config = replace(model_config or ModelConfig(), moe_enabled=config.moe_enabled)
    model = ChatVLA(model_config, seed=config.seed)
    sequences = _robot_sequences(robot_data, model_config, config)
    logger.info(
        f"Stage 1: {len(sequences)} robot sequences, {config.total_steps} steps, "
        f"moe={config.moe_enabled}, reasoning={config.with_reasoning}"
    )

    trainer = PhasedTrainer(model, config, log_path=log_path)
    trainer.run(robot_batches(sequences, config.batch_size, config.seed), config.total_steps)
    return trainer.checkpoint({"total_step": trainer.step_count})


def train_stage2(
    config: TrainConfig,
    checkpoint: Optional[Checkpoint],
    robot_data: RobotData,
    vt_data: VTData,
    model_config: Optional[ModelConfig] = None,
    log_path=None,
) -> Checkpoint:
    """
    Stage 2: co-training on mixed batches at config.vt_to_robot_ratio.

    checkpoint is the stage-1 result, or None to start from fresh weights.
    """
    if config.stage != 2:
        raise StageError(f"train_stage2 needs stage=2, got {config.stage}")

    optimizer = None
    previous_steps = 0
    if checkpoint is None:
        model_config = replace(model_config or ModelConfig(), moe_enabled=config.moe_enabled)
        model = ChatVLA(model_config, seed=config.seed)
        logger.info("Stage 2 from fresh weights")
    else:
        if checkpoint.metadata.get("vocab_hash") != vocab_hash():
            raise CheckpointError(
                "vocab_hash",
                f"checkpoint {checkpoint.metadata.get('vocab_hash')} != current {vocab_hash()}",
            )
        if checkpoint.stage != 1:
            raise StageError(f"Stage 2 resumes a stage-1 checkpoint, got stage {checkpoint.stage}")
        model = checkpoint.to_model()
        if model.config.moe_enabled != config.moe_enabled:
            raise StageError(
                f"moe_enabled={config.moe_enabled} does not match the checkpoint "
                f"({model.config.moe_enabled})"
            )
        previous_steps = int(checkpoint.metadata.get("total_step", checkpoint.step))
        if not config.reset_optimizer_stage2:
            optimizer = Adam(model.params, config.learning_rate, config.grad_clip)
            optimizer.load_state(
                checkpoint.optimizer_tensors, checkpoint.metadata.get("optimizer_steps", {})
            )

    robot = _robot_sequences(robot_data, model.config, config)
    vt = _vt_sequences(vt_data)
    logger.info(
        f"Stage 2: {len(robot)} robot / {len(vt)} vt sequences, ratio vt:robot "
        f"{config.vt_to_robot_ratio[0]}:{config.vt_to_robot_ratio[1]}, {config.total_steps} steps"
    )

    trainer = PhasedTrainer(model, config, optimizer=optimizer, log_path=log_path)
    stream = make_mixed_batches(robot, vt, config.vt_to_robot_ratio, config.batch_size, config.seed)
    trainer.run(stream, config.total_steps)
    return trainer.checkpoint({"total_step": previous_steps + trainer.step_count})
