"""
Transformer backbone: shared multi-head self-attention and a per-sequence
routed FFN expert in every block.

    x'   = x  + MHA(LN(x))
    x^l  = x' + FFN_m(LN(x'))      m = 0: expert_vl, m >= 1: expert_robot[m]

The routing index m is fixed per sequence by its system prompt. With MoE
disabled every sequence goes through the single wide ffn_dense.
"""

import math
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.model.config import ModelConfig, RouterDecision, RoutingError, SequenceError
from src.model.params import expert_prefix
from src.model.sequence import SequenceBatch
from src.tensor_core import Tensor, ops


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ops.add(ops.matmul(x, w), b)


def attention_sublayer(
    x: Tensor,
    params: Dict[str, Tensor],
    block: int,
    config: ModelConfig,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    x' = x + MHA(LN(x)) for x of shape [B, S, d] (or [S, d]).

    mask is an additive [B, 1, S, S] array (0 = attend, large negative =
    blocked); without it attention is unrestricted. No routing input
    exists on this path.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = ops.reshape(x, (1,) + x.shape)
    b, s, d = x.shape
    if s > config.max_seq:
        raise SequenceError(f"Sequence length {s} exceeds max_seq={config.max_seq}")
    h, hd = config.n_heads, config.head_dim
    p = f"block{block}.attn"

    normed = ops.layer_norm(x, params[f"{p}.ln_g"], params[f"{p}.ln_b"])

    def heads(name: str) -> Tensor:
        proj = _linear(normed, params[f"{p}.w{name}"], params[f"{p}.b{name}"])
        return ops.transpose(ops.reshape(proj, (b, s, h, hd)), (0, 2, 1, 3))

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    if mask is not None:
        full = np.broadcast_to(mask, (b, h, s, s)).copy()
        scores = ops.add(scores, Tensor(full))
    weights = ops.softmax(scores)
    context = ops.matmul(weights, v)
    merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (b, s, d))
    out = ops.add(x, _linear(merged, params[f"{p}.wo"], params[f"{p}.bo"]))
    return ops.reshape(out, (s, d)) if squeeze else out


def ffn(x: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    """GELU(LN(x) W1 + b1) W2 + b2 with the expert's own layer norm."""
    normed = ops.layer_norm(x, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])
    hidden = ops.gelu(_linear(normed, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return _linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _check_decision(decision: RouterDecision, config: ModelConfig):
    if decision.n_control != config.n_control_experts or not 0 <= decision.m <= config.n_control_experts:
        raise RoutingError(
            f"Expert index m={decision.m} out of range for "
            f"{config.n_control_experts} control experts"
        )


def moe_sublayer(
    x_prime: Tensor,
    decisions: Sequence[RouterDecision],
    params: Dict[str, Tensor],
    block: int,
    config: ModelConfig,
) -> Tensor:
    """
    x_next = x' + FFN_m(LN(x')) with one routing decision per sequence.

    Only the selected expert's parameters enter the graph. Sequences that
    share m run as one slab; mixed decisions are split per sequence.
    """
    squeeze = x_prime.ndim == 2
    if squeeze:
        x_prime = ops.reshape(x_prime, (1,) + x_prime.shape)
    if len(decisions) != x_prime.shape[0]:
        raise RoutingError(
            f"{len(decisions)} routing decisions for a batch of {x_prime.shape[0]}"
        )
    for decision in decisions:
        _check_decision(decision, config)

    ms = [d.m for d in decisions]
    if not config.moe_enabled:
        out = ops.add(x_prime, ffn(x_prime, params, expert_prefix(block, 0, moe_enabled=False)))
    elif len(set(ms)) == 1:
        out = ops.add(x_prime, ffn(x_prime, params, expert_prefix(block, ms[0])))
    else:
        rows: List[Tensor] = []
        for i, m in enumerate(ms):
            row = ops.slice(x_prime, 0, i, i + 1)
            rows.append(ops.add(row, ffn(row, params, expert_prefix(block, m))))
        out = ops.concat(rows, axis=0)
    return ops.reshape(out, out.shape[1:]) if squeeze else out


@lru_cache(maxsize=None)
def patch_grid(config: ModelConfig) -> np.ndarray:
    """
    Fixed [n_patches, d_model] Fourier features of each patch centre (x, y)
    in [-1, 1], row-major like the patches themselves. Channels cycle
    sin x, cos x, sin y, cos y with frequency growing every four channels.
    """
    side = config.image_side // config.patch_size
    pos_x, pos_y = np.meshgrid(np.linspace(-1.0, 1.0, side), np.linspace(-1.0, 1.0, side))
    coords = np.stack([pos_x.reshape(-1), pos_y.reshape(-1)], axis=1)
    channels = np.arange(config.d_model)
    angle = coords[:, (channels // 2) % 2] * (channels // 4 + 1) * (math.pi / 2.0)
    grid = np.where(channels % 2 == 0, np.sin(angle), np.cos(angle))
    grid.setflags(write=False)
    return grid


def embed(batch: SequenceBatch, params: Dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Patch projections plus the fixed patch grid, then token embeddings, plus learned positions."""
    fixed = np.zeros((batch.seq_len, config.d_model))
    fixed[: config.n_patches] = patch_grid(config)
    patches = _linear(Tensor(batch.patches), params["embed.patch_w"], params["embed.patch_b"])
    tokens = ops.embedding(params["embed.tok"], batch.token_ids)
    x = ops.add(ops.concat([patches, tokens], axis=1), Tensor(fixed))
    positions = ops.slice(params["embed.pos"], 0, 0, batch.seq_len)
    return ops.add(x, positions)


def backbone_forward(batch: SequenceBatch, params: Dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Features [B, S, d]: L blocks of attention then routed FFN, final layer norm."""
    if batch.seq_len > config.max_seq:
        raise SequenceError(f"Sequence length {batch.seq_len} exceeds max_seq={config.max_seq}")
    mask = batch.attention_mask(config.n_patches)
    x = embed(batch, params, config)
    for i in range(config.n_layers):
        x = attention_sublayer(x, params, i, config, mask)
        x = moe_sublayer(x, batch.decisions, params, i, config)
    return ops.layer_norm(x, params["final_ln.g"], params["final_ln.b"])
