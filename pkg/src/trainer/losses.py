from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.model.chatvla import ChatVLA
from src.model.config import SequenceError, TaskTag
from src.model.diffusion import noise_schedule
from src.model.sequence import SequenceBatch
from src.tensor_core import Tensor, ops


@dataclass
class DiffusionTargets:
    timesteps: np.ndarray  # [B]
    noise: np.ndarray  # [B, action_size]
    noisy: np.ndarray  # [B, action_size]


def diffusion_targets(actions: np.ndarray, rng: np.random.Generator, n_steps: int) -> DiffusionTargets:
    """Draw t ~ U{0..T-1} and eps ~ N(0, I) per sample and noise the clean chunks."""
    x0 = actions.reshape(actions.shape[0], -1)
    t = rng.integers(0, n_steps, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    noisy = noise_schedule(n_steps).add_noise(x0, eps, t)
    return DiffusionTargets(t, eps, noisy)


def text_loss(model: ChatVLA, features: Tensor, batch: SequenceBatch) -> Tensor:
    logits = model.text_logits(features)
    b, s, v = logits.shape
    return ops.cross_entropy(
        ops.reshape(logits, (b * s, v)),
        batch.targets.reshape(-1),
        batch.loss_mask.reshape(-1),
    )


def loss_understanding(model: ChatVLA, batch: SequenceBatch) -> Tensor:
    """Mean next-token cross-entropy over answer tokens (and their <eos>) only."""
    if batch.tag is not TaskTag.UNDERSTANDING:
        raise SequenceError(f"loss_understanding needs an understanding batch, got {batch.tag.value}")
    if batch.n_targets == 0:
        raise SequenceError("Understanding batch has no answer tokens")
    return text_loss(model, model.forward(batch), batch)


def loss_control(
    model: ChatVLA,
    batch: SequenceBatch,
    rng: np.random.Generator,
    with_reasoning: bool = False,
    reasoning_weight: float = 1.0,
    denoiser: Optional[Callable[[Tensor, np.ndarray, np.ndarray], Tensor]] = None,
) -> Tensor:
    """
    Diffusion noise-prediction MSE on the batch's action chunks, plus
    reasoning_weight * cross-entropy over reasoning tokens when enabled.
    The reasoning term is exactly zero for a batch without reasoning tokens.
    """
    if batch.tag is not TaskTag.CONTROL:
        raise SequenceError(f"loss_control needs a control batch, got {batch.tag.value}")
    if batch.actions is None:
        raise SequenceError("Control batch carries no action chunks")

    features = model.forward(batch)
    pooled = model.pool(features, batch)
    targets = diffusion_targets(batch.actions, rng, model.config.diffusion_steps)
    denoise = denoiser or model.denoise_step
    prediction = denoise(pooled, targets.noisy, targets.timesteps)
    loss = ops.mse(prediction, targets.noise)

    if with_reasoning and batch.n_targets > 0:
        loss = ops.add(loss, ops.scale(text_loss(model, features, batch), reasoning_weight))
    return loss
