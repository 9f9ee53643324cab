"""
Task interference probe: per-block cosine between the control and the
understanding gradients on the shared attention parameters.
"""

import math
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from src.model.chatvla import ChatVLA
from src.model.config import TaskTag
from src.model.params import block_index, is_attention
from src.model.sequence import SequenceBatch, TokenSequence
from src.trainer.checkpoint import Checkpoint
from src.trainer.losses import loss_control, loss_understanding

BatchLike = Union[SequenceBatch, Sequence[TokenSequence]]


def gradient_cosine(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """Cosine similarity; None when either vector has zero norm."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(a, b)) / (na * nb)


def _attention_grads(model: ChatVLA, batch: SequenceBatch, probe_seed: int) -> Dict[int, np.ndarray]:
    model.zero_grad()
    if batch.tag is TaskTag.CONTROL:
        loss = loss_control(model, batch, np.random.default_rng(probe_seed))
    else:
        loss = loss_understanding(model, batch)
    loss.backward()

    per_block: Dict[int, List[np.ndarray]] = {b: [] for b in range(model.config.n_layers)}
    for name, tensor in model.params.items():
        if not is_attention(name):
            continue
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        per_block[block_index(name)].append(grad.ravel())
    model.zero_grad()
    return {b: np.concatenate(parts) for b, parts in per_block.items()}


def grad_conflict_probe(
    source: Union[ChatVLA, Checkpoint],
    robot_batch: BatchLike,
    vt_batch: BatchLike,
    probe_seed: int = 0,
) -> List[Optional[float]]:
    """
    One cosine per block (n_layers entries). Each batch is scored with the
    loss of its own task tag; None marks a block where either gradient is zero.
    """
    model = source.to_model() if isinstance(source, Checkpoint) else source
    batches = [
        b if isinstance(b, SequenceBatch) else model.collate(list(b)) for b in (robot_batch, vt_batch)
    ]
    first = _attention_grads(model, batches[0], probe_seed)
    second = _attention_grads(model, batches[1], probe_seed)
    cosines = [gradient_cosine(first[b], second[b]) for b in range(model.config.n_layers)]
    return [None if c is None or math.isnan(c) else c for c in cosines]
