"""
Parameter construction and canonical naming.

    embed.{patch_w, patch_b, tok, pos}
    block{i}.attn.{ln_g, ln_b, wq, bq, wk, bk, wv, bv, wo, bo}
    block{i}.expert_vl.{ln_g, ln_b, w1, b1, w2, b2}
    block{i}.expert_robot{m}.{...}          m = 1 .. n_control_experts
    block{i}.ffn_dense.{...}                dense baseline only
    final_ln.{g, b}
    text_head.{w, b}
    action_head.{w1, b1, w2, b2}
"""

import math
from collections import OrderedDict
from typing import Dict, Iterable, List

import numpy as np

from src.model.config import ModelConfig
from src.tensor_core import Tensor

GROUPS = ("shared", "expert_vl", "expert_robot", "dense", "text_head", "action_head")
EMBED_STD = 0.02


def param_group(name: str) -> str:
    """Optimizer group of a canonical parameter name."""
    head = name.split(".", 1)[0]
    if head in ("text_head", "action_head"):
        return head
    if head.startswith("block"):
        part = name.split(".")[1]
        if part == "expert_vl":
            return "expert_vl"
        if part.startswith("expert_robot"):
            return "expert_robot"
        if part == "ffn_dense":
            return "dense"
    return "shared"


def is_attention(name: str) -> bool:
    return name.startswith("block") and name.split(".")[1] == "attn"


def block_index(name: str) -> int:
    return int(name.split(".", 1)[0][len("block"):])


def expert_prefix(block: int, m: int, moe_enabled: bool = True) -> str:
    """Parameter prefix of FFN expert m in a block (dense FFN when MoE is off)."""
    if not moe_enabled:
        return f"block{block}.ffn_dense"
    if m == 0:
        return f"block{block}.expert_vl"
    return f"block{block}.expert_robot{m}"


def _linear(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain / math.sqrt(fan_in), size=(fan_in, fan_out))


def _ffn(rng: np.random.Generator, d: int, width: int, out_gain: float) -> Dict[str, np.ndarray]:
    return {
        "ln_g": np.ones(d),
        "ln_b": np.zeros(d),
        "w1": _linear(rng, d, width),
        "b1": np.zeros(width),
        "w2": _linear(rng, width, d, out_gain),
        "b2": np.zeros(d),
    }


def param_shapes(config: ModelConfig) -> Dict[str, tuple]:
    """Expected shape of every parameter for a config."""
    return {name: t.shape for name, t in init_params(config, np.random.default_rng(0)).items()}


def init_params(config: ModelConfig, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
    """Fresh parameters in canonical order; every tensor owns its storage."""
    d = config.d_model
    residual_gain = 1.0 / math.sqrt(2.0 * max(1, config.n_layers))
    raw: "OrderedDict[str, np.ndarray]" = OrderedDict()

    raw["embed.patch_w"] = _linear(rng, config.patch_dim, d)
    raw["embed.patch_b"] = np.zeros(d)
    raw["embed.tok"] = rng.normal(0.0, EMBED_STD, size=(config.vocab_size, d))
    raw["embed.pos"] = rng.normal(0.0, EMBED_STD, size=(config.max_seq, d))

    for i in range(config.n_layers):
        attn = f"block{i}.attn"
        raw[f"{attn}.ln_g"] = np.ones(d)
        raw[f"{attn}.ln_b"] = np.zeros(d)
        for proj in ("q", "k", "v"):
            raw[f"{attn}.w{proj}"] = _linear(rng, d, d)
            raw[f"{attn}.b{proj}"] = np.zeros(d)
        raw[f"{attn}.wo"] = _linear(rng, d, d, residual_gain)
        raw[f"{attn}.bo"] = np.zeros(d)

        if config.moe_enabled:
            experts = [(expert_prefix(i, m), config.d_ff) for m in range(config.n_control_experts + 1)]
        else:
            experts = [(expert_prefix(i, 0, moe_enabled=False), config.dense_ff)]
        for prefix, width in experts:
            for key, value in _ffn(rng, d, width, residual_gain).items():
                raw[f"{prefix}.{key}"] = value

    raw["final_ln.g"] = np.ones(d)
    raw["final_ln.b"] = np.zeros(d)
    raw["text_head.w"] = _linear(rng, d, config.vocab_size)
    raw["text_head.b"] = np.zeros(config.vocab_size)

    head_in = config.cond_dim + config.timestep_dim + config.action_size
    raw["action_head.w1"] = _linear(rng, head_in, config.action_hidden)
    raw["action_head.b1"] = np.zeros(config.action_hidden)
    raw["action_head.w2"] = _linear(rng, config.action_hidden, config.action_size, 0.1)
    raw["action_head.b2"] = np.zeros(config.action_size)

    return OrderedDict(
        (name, Tensor(value, requires_grad=True, name=name)) for name, value in raw.items()
    )


def select(params: Dict[str, Tensor], groups: Iterable[str]) -> List[str]:
    wanted = set(groups)
    return [name for name in params if param_group(name) in wanted]
