"""
Diffusion action head.

A 2-layer MLP reads [conditioning features, sinusoidal timestep embedding,
noisy chunk] and estimates the clean flattened action chunk; the head
reports the noise that estimate implies, so training stays an MSE on the
added noise. The noise schedule is the linear beta schedule 1e-4 -> 0.02
of a 1000-step base process, respaced to `diffusion_steps` steps by taking
the cumulative alpha-bar at evenly spaced base steps. Sampling runs
ancestral DDPM steps with the predicted clean chunk clipped to [-1, 1].
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Union

import numpy as np

from src.model.config import ModelConfig
from src.tensor_core import Tensor, no_grad, ops

BETA_START = 1e-4
BETA_END = 0.02
BASE_STEPS = 1000


class TimestepError(ValueError):
    """Raised when a diffusion timestep is outside [0, diffusion_steps)"""

    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    base_steps: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    def alpha_bar_prev(self, k: int) -> float:
        return 1.0 if k == 0 else float(self.alpha_bars[k - 1])

    def add_noise(self, x0: np.ndarray, eps: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Forward rule x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, per row."""
        abar = self.alpha_bars[t][:, None]
        return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


@lru_cache(maxsize=None)
def noise_schedule(n_steps: int) -> NoiseSchedule:
    base_betas = np.linspace(BETA_START, BETA_END, BASE_STEPS)
    base_abar = np.cumprod(1.0 - base_betas)
    base_steps = np.array(
        [int(round((k + 1) * BASE_STEPS / n_steps)) - 1 for k in range(n_steps)]
    )
    alpha_bars = base_abar[base_steps]
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    betas = 1.0 - alpha_bars / prev
    return NoiseSchedule(betas, 1.0 - betas, alpha_bars, base_steps)


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding [len(t), dim]: sin half then cos half."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def pool_features(features: Tensor, weights: np.ndarray) -> Tensor:
    """Masked mean over positions: [B, S, d] x [B, 1, S] -> [B, d]."""
    pooled = ops.matmul(Tensor(weights), features)
    return ops.reshape(pooled, (pooled.shape[0], pooled.shape[2]))


def _check_timesteps(t: np.ndarray, config: ModelConfig):
    if t.size and (t.min() < 0 or t.max() >= config.diffusion_steps):
        raise TimestepError(
            f"timestep must lie in [0, {config.diffusion_steps}), got {t.tolist()}"
        )


def denoise_step(
    pooled: Tensor,
    noisy_action: Union[Tensor, np.ndarray],
    timestep,
    params: Dict[str, Tensor],
    config: ModelConfig,
) -> Tensor:
    """
    Predicted noise [B, action_size] for noisy flattened chunks [B, action_size]
    at integer timestep(s) (scalar or one per row).

    The MLP estimates the clean chunk x0; the noise implied by the forward
    rule, (x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t), is what it returns.
    """
    noisy = ops.as_tensor(noisy_action)
    b = pooled.shape[0]
    t = np.broadcast_to(np.asarray(timestep, dtype=np.int64), (b,))
    _check_timesteps(t, config)
    temb = Tensor(timestep_embedding(t, config.timestep_dim))
    head_in = ops.concat([pooled, temb, noisy], axis=1)
    hidden = ops.gelu(ops.add(ops.matmul(head_in, params["action_head.w1"]), params["action_head.b1"]))
    clean = ops.add(ops.matmul(hidden, params["action_head.w2"]), params["action_head.b2"])

    abar = noise_schedule(config.diffusion_steps).alpha_bars[t]
    shape = (b, config.action_size)
    noise_coef = Tensor(np.broadcast_to((1.0 / np.sqrt(1.0 - abar))[:, None], shape).copy())
    clean_coef = Tensor(np.broadcast_to((-np.sqrt(abar / (1.0 - abar)))[:, None], shape).copy())
    return ops.add(ops.mul(noisy, noise_coef), ops.mul(clean, clean_coef))


def sample_action_chunk(
    pooled: Tensor,
    params: Dict[str, Tensor],
    config: ModelConfig,
    rng_seed: int,
) -> np.ndarray:
    """
    Reverse diffusion from unit Gaussian noise; returns [B, chunk_len, action_dim]
    clipped to [-1, 1]. Deterministic given rng_seed.
    """
    schedule = noise_schedule(config.diffusion_steps)
    rng = np.random.default_rng(rng_seed)
    b = pooled.shape[0]
    x = rng.standard_normal((b, config.action_size))
    pooled = pooled.detach()

    with no_grad():
        for k in reversed(range(schedule.n_steps)):
            eps = denoise_step(pooled, x, k, params, config).data
            abar = float(schedule.alpha_bars[k])
            abar_prev = schedule.alpha_bar_prev(k)
            beta = float(schedule.betas[k])
            x0 = np.clip((x - math.sqrt(1.0 - abar) * eps) / math.sqrt(abar), -1.0, 1.0)
            coef_x0 = math.sqrt(abar_prev) * beta / (1.0 - abar)
            coef_xt = math.sqrt(float(schedule.alphas[k])) * (1.0 - abar_prev) / (1.0 - abar)
            x = coef_x0 * x0 + coef_xt * x
            if k > 0:
                variance = beta * (1.0 - abar_prev) / (1.0 - abar)
                x = x + math.sqrt(variance) * rng.standard_normal(x.shape)

    chunk = np.clip(x, -1.0, 1.0)
    return chunk.reshape(b, config.action_chunk_len, config.action_dim)
