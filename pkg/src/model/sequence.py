"""
Token sequences and batches.

A sequence is the image patch prefix followed by text: the system prompt
token, the instruction or question, and (for training) the reasoning or
answer closed by <eos>. Batches right-pad text with <pad> and carry the
masks the backbone and losses need.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.model.config import ModelConfig, RouterDecision, RoutingError, SequenceError, TaskTag
from src.worldsim.vocab import EOS_ID, PAD_ID, prompt_id, tokenize

MASK_VALUE = -1e9


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """[side, side, 3] -> [n_patches, patch_size * patch_size * 3], row-major patches."""
    side = image.shape[0]
    n = side // patch_size
    patches = image.reshape(n, patch_size, n, patch_size, 3).transpose(0, 2, 1, 3, 4)
    return patches.reshape(n * n, patch_size * patch_size * 3)


@dataclass
class TokenSequence:
    image: np.ndarray = field(repr=False)
    tokens: List[int]
    tag: TaskTag
    target_mask: Optional[List[int]] = None
    action: Optional[np.ndarray] = field(default=None, repr=False)
    control_index: int = 1

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != prompt_id(self.tag.prompt):
            raise RoutingError(
                f"Sequence for tag {self.tag.value} must start with its system prompt token"
            )
        if self.target_mask is None:
            self.target_mask = [0] * len(self.tokens)
        if len(self.target_mask) != len(self.tokens):
            raise SequenceError(
                f"target_mask length {len(self.target_mask)} != tokens {len(self.tokens)}"
            )

    @property
    def n_text(self) -> int:
        return len(self.tokens)

    def length(self, config: ModelConfig) -> int:
        return config.n_patches + len(self.tokens)

    def positions(self, config: ModelConfig) -> List[int]:
        return list(range(self.length(config)))

    def decision(self, config: ModelConfig) -> RouterDecision:
        return RouterDecision.for_tag(self.tag, config.n_control_experts, self.control_index)

    def extended(self, token: int) -> "TokenSequence":
        return TokenSequence(
            self.image, self.tokens + [int(token)], self.tag, self.target_mask + [0],
            self.action, self.control_index,
        )

    @classmethod
    def build(
        cls,
        image: np.ndarray,
        tag: TaskTag,
        context: str,
        target: Optional[str] = None,
        action: Optional[np.ndarray] = None,
        control_index: int = 1,
    ) -> "TokenSequence":
        """
        Prompt token + context words, then target words and <eos> when a
        target is given. Only the target and <eos> are prediction targets.
        """
        tokens = [prompt_id(tag.prompt)] + tokenize(context)
        mask = [0] * len(tokens)
        if target is not None:
            target_ids = (tokenize(target) if target else []) + [EOS_ID]
            tokens += target_ids
            mask += [1] * len(target_ids)
        return cls(image, tokens, tag, mask, action, control_index)


@dataclass
class SequenceBatch:
    """Task-pure batch: every sequence carries the same tag."""

    patches: np.ndarray  # [B, n_patches, patch_dim]
    token_ids: np.ndarray  # [B, T] text ids, PAD right-padded
    valid: np.ndarray  # [B, S] 1.0 at real positions
    targets: np.ndarray  # [B, S] next-token id at each position
    loss_mask: np.ndarray  # [B, S] 1.0 where the next token is a prediction target
    tag: TaskTag
    decisions: List[RouterDecision]
    actions: Optional[np.ndarray] = None  # [B, chunk_len, action_dim]

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.valid.shape[1]

    @property
    def n_targets(self) -> int:
        return int(self.loss_mask.sum())

    def attention_mask(self, n_patches: int) -> np.ndarray:
        """
        Additive mask [B, 1, S, S]: image prefix attends bidirectionally within
        itself, text is causal over everything before it, padding keys masked.
        """
        s = self.seq_len
        q = np.arange(s)[:, None]
        k = np.arange(s)[None, :]
        allowed = (k < n_patches) | (k <= q)
        allowed = allowed[None, :, :] & (self.valid[:, None, :] > 0)
        return np.where(allowed, 0.0, MASK_VALUE)[:, None, :, :]

    def pool_weights(self) -> np.ndarray:
        """[B, 1, S] averaging weights over valid positions."""
        w = self.valid / self.valid.sum(axis=1, keepdims=True)
        return w[:, None, :]

    def last_weights(self) -> np.ndarray:
        """[B, 1, S] one-hot on the last valid position of each sequence."""
        last = self.valid.shape[1] - 1 - np.argmax(self.valid[:, ::-1] > 0, axis=1)
        w = np.zeros_like(self.valid)
        w[np.arange(self.size), last] = 1.0
        return w[:, None, :]


def collate(sequences: Sequence[TokenSequence], config: ModelConfig) -> SequenceBatch:
    if not sequences:
        raise SequenceError("Cannot collate an empty batch")
    tags = {s.tag for s in sequences}
    if len(tags) != 1:
        raise RoutingError("Batches must be task-pure (one tag per batch)")
    for s in sequences:
        if s.length(config) > config.max_seq:
            raise SequenceError(
                f"Sequence length {s.length(config)} exceeds max_seq={config.max_seq}"
            )

    n_img = config.n_patches
    text_len = max(s.n_text for s in sequences)
    seq_len = n_img + text_len
    b = len(sequences)

    token_ids = np.full((b, text_len), PAD_ID, dtype=np.int64)
    valid = np.zeros((b, seq_len))
    targets = np.zeros((b, seq_len), dtype=np.int64)
    loss_mask = np.zeros((b, seq_len))
    for i, s in enumerate(sequences):
        n = s.n_text
        token_ids[i, :n] = s.tokens
        valid[i, : n_img + n] = 1.0
        # position n_img + j - 1 predicts text token j
        for j in range(1, n):
            targets[i, n_img + j - 1] = s.tokens[j]
            loss_mask[i, n_img + j - 1] = float(s.target_mask[j])

    patches = np.stack([patchify(s.image, config.patch_size) for s in sequences])
    actions = None
    if all(s.action is not None for s in sequences):
        actions = np.stack([np.asarray(s.action, dtype=np.float64) for s in sequences])

    return SequenceBatch(
        patches=patches,
        token_ids=token_ids,
        valid=valid,
        targets=targets,
        loss_mask=loss_mask,
        tag=sequences[0].tag,
        decisions=[s.decision(config) for s in sequences],
        actions=actions,
    )
