"""
VQA accuracy on fresh synthetic samples.

exact   greedy-decode the answer and compare its words with the ground truth
ranked  pick the most likely answer from the category's closed answer set
"""

from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Union

import numpy as np

from src.evalbench.rollouts import EVAL_SEED_OFFSET
from src.evalbench.scoring import success_rate
from src.model.chatvla import ChatVLA
from src.model.config import TaskTag
from src.trainer.checkpoint import Checkpoint
from src.utils.logger import setup_logger
from src.worldsim.questions import ANSWER_SETS, CATEGORIES, VTSample, answer_question, gen_vt_samples

logger = setup_logger()

VQA_MODES = ("exact", "ranked")
OVERALL = "overall"


class Answerer(ABC):
    name = "answerer"

    @abstractmethod
    def answer(self, sample: VTSample) -> str:
        pass


class OracleAnswerer(Answerer):
    """Reads the answer off the sample's scene."""

    name = "oracle"

    def answer(self, sample: VTSample) -> str:
        return answer_question(sample.scene, sample.question)[1]


class ModelAnswerer(Answerer):
    name = "model"

    def __init__(self, model: ChatVLA, mode: str = "exact", max_new: int = 8):
        if mode not in VQA_MODES:
            raise ValueError(f"vqa mode must be one of {VQA_MODES}, got {mode!r}")
        self.model = model
        self.mode = mode
        self.max_new = max_new

    def answer(self, sample: VTSample) -> str:
        if self.mode == "exact":
            return self.model.answer(sample.image, sample.question, self.max_new)
        candidates = ANSWER_SETS[sample.category]
        scores = self.model.score_candidates(
            sample.image, TaskTag.UNDERSTANDING, sample.question, candidates
        )
        return candidates[int(np.argmax(scores))]


def _normalize(text: str) -> str:
    return " ".join(text.split())


def as_answerer(source: Union[Answerer, ChatVLA, Checkpoint], mode: str = "exact") -> Answerer:
    if isinstance(source, Answerer):
        return source
    if isinstance(source, Checkpoint):
        return ModelAnswerer(source.to_model(), mode)
    if isinstance(source, ChatVLA):
        return ModelAnswerer(source, mode)
    raise TypeError(f"Cannot answer questions with a {type(source).__name__}")


def vqa_samples(n: int, seed: int) -> List[VTSample]:
    """Held-out samples; the seed offset keeps them apart from training data."""
    return gen_vt_samples(n, EVAL_SEED_OFFSET + seed)


def run_vqa_eval(
    source: Union[Answerer, ChatVLA, Checkpoint],
    n: int,
    seed: int,
    mode: str = "exact",
    samples: Optional[List[VTSample]] = None,
) -> Dict[str, float]:
    """Accuracy per category plus an `overall` entry."""
    answerer = as_answerer(source, mode)
    samples = samples if samples is not None else vqa_samples(n, seed)

    hits = {c: 0 for c in CATEGORIES}
    totals = {c: 0 for c in CATEGORIES}
    for sample in samples:
        predicted = _normalize(answerer.answer(sample))
        totals[sample.category] += 1
        hits[sample.category] += int(predicted == _normalize(sample.answer))

    accuracy = {c: success_rate(hits[c], totals[c]) for c in CATEGORIES if totals[c]}
    accuracy[OVERALL] = success_rate(sum(hits.values()), len(samples))
    logger.info(
        f"[{answerer.name}] VQA ({mode}) over {len(samples)} samples: "
        + ", ".join(f"{c}={v:.3f}" for c, v in accuracy.items())
    )
    return accuracy
