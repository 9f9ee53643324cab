from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.model.backbone import backbone_forward
from src.model.config import ModelConfig, TaskTag
from src.model.diffusion import denoise_step, pool_features, sample_action_chunk
from src.model.params import init_params
from src.model.sequence import SequenceBatch, TokenSequence, collate
from src.tensor_core import Tensor, no_grad, ops
from src.utils.logger import setup_logger
from src.worldsim.vocab import EOS_ID, detokenize, prompt_id, tokenize

logger = setup_logger()


def text_logits(features: Tensor, params: Dict[str, Tensor]) -> Tensor:
    """Vocabulary logits [.., vocab_size]; no softmax."""
    return ops.add(ops.matmul(features, params["text_head.w"]), params["text_head.b"])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class ChatVLA:
    """Backbone, text head and diffusion action head over one parameter map."""

    def __init__(self, config: ModelConfig, params: Optional["OrderedDict[str, Tensor]"] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed))

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return self.params

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self.params.items())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    # forward paths

    def collate(self, sequences: Sequence[TokenSequence]) -> SequenceBatch:
        return collate(sequences, self.config)

    def forward(self, batch: SequenceBatch) -> Tensor:
        return backbone_forward(batch, self.params, self.config)

    def text_logits(self, features: Tensor) -> Tensor:
        return text_logits(features, self.params)

    def pool(self, features: Tensor, batch: SequenceBatch) -> Tensor:
        """Action-head conditioning [B, cond_dim]: masked mean over valid positions, then the last one."""
        mean = pool_features(features, batch.pool_weights())
        last = pool_features(features, batch.last_weights())
        return ops.concat([mean, last], axis=1)

    def denoise_step(self, pooled: Tensor, noisy_action, timestep) -> Tensor:
        return denoise_step(pooled, noisy_action, timestep, self.params, self.config)

    def sample_action_chunk(self, pooled: Tensor, rng_seed: int) -> np.ndarray:
        return sample_action_chunk(pooled, self.params, self.config, rng_seed)

    # text generation

    def decode_text(self, seq: TokenSequence, max_new: int) -> List[int]:
        """
        Greedy decoding; returns generated ids only (without <eos>).

        When the context would exceed max_seq the oldest text tokens after
        the system prompt are dropped; image patches are never truncated.
        """
        if max_new < 1:
            raise ValueError(f"max_new must be >= 1, got {max_new}")
        budget = self.config.max_seq - self.config.n_patches
        tokens = list(seq.tokens)
        generated: List[int] = []
        dropped = 0

        with no_grad():
            for _ in range(max_new):
                while len(tokens) > budget:
                    del tokens[1]
                    dropped += 1
                current = TokenSequence(seq.image, tokens, seq.tag, control_index=seq.control_index)
                batch = self.collate([current])
                logits = self.text_logits(self.forward(batch)).data
                next_id = int(np.argmax(logits[0, batch.seq_len - 1]))
                if next_id == EOS_ID:
                    break
                generated.append(next_id)
                tokens.append(next_id)

        if dropped:
            logger.warning(f"Context overflow: dropped {dropped} oldest text tokens while decoding")
        return generated

    def answer(self, image: np.ndarray, question: str, max_new: int = 8) -> str:
        seq = TokenSequence.build(image, TaskTag.UNDERSTANDING, question)
        return detokenize(self.decode_text(seq, max_new))

    def score_candidates(
        self, image: np.ndarray, tag: TaskTag, context: str, candidates: Sequence[str]
    ) -> np.ndarray:
        """Log-likelihood of each candidate continuation (its words plus <eos>)."""
        sequences = [TokenSequence.build(image, tag, context, target=c) for c in candidates]
        with no_grad():
            batch = self.collate(sequences)
            logp = log_softmax(self.text_logits(self.forward(batch)).data)
        picked = np.take_along_axis(logp, batch.targets[:, :, None], axis=2)[:, :, 0]
        return (picked * batch.loss_mask).sum(axis=1)

    # control

    def act(
        self,
        image: np.ndarray,
        instruction: str,
        rng_seed: int,
        with_reasoning: bool = False,
        control_index: int = 1,
    ) -> Tuple[np.ndarray, Optional[str]]:
        """
        One action chunk [chunk_len, action_dim] for an observation. With
        reasoning the model first writes its reasoning under the control
        prompt and the action head pools over it; when the prompt leaves no
        room in max_seq the reasoning is skipped and None returned.
        """
        prefix = [prompt_id(TaskTag.CONTROL.prompt)] + tokenize(instruction)
        reasoning = None
        tokens = prefix
        room = self.config.max_seq - self.config.n_patches - len(prefix) - 1
        if with_reasoning and room < 1:
            logger.warning(
                f"No room for reasoning after a {len(prefix)}-token prompt "
                f"(max_seq={self.config.max_seq}); acting without it"
            )
        elif with_reasoning:
            seq = TokenSequence(image, prefix, TaskTag.CONTROL, control_index=control_index)
            generated = self.decode_text(seq, room)
            reasoning = detokenize(generated)
            tokens = prefix + generated + [EOS_ID]

        seq = TokenSequence(image, tokens, TaskTag.CONTROL, control_index=control_index)
        with no_grad():
            batch = self.collate([seq])
            pooled = self.pool(self.forward(batch), batch)
        chunk = self.sample_action_chunk(pooled, rng_seed)[0]
        return chunk, reasoning
