"""
Training sequences and batch streams.

Batches are task-pure. Stage 2 interleaves vt and robot batches at a
vt:robot ratio a:b; within every aligned window of a + b batches the
counts are exactly a and b. Each position goes to the kind with the
larger deficit against its target share; ties go to a kind chosen once per
run from the seed.
"""

from dataclasses import dataclass
from itertools import islice
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from src.model.config import ModelConfig, TaskTag
from src.model.sequence import TokenSequence
from src.trainer.config import StageError
from src.worldsim.datasets import RobotDataset, VTDataset

VT = "vt"
ROBOT = "robot"


@dataclass
class Batch:
    kind: str
    sequences: List[TokenSequence]
    index: int = 0


def robot_sequences(
    dataset: RobotDataset, config: ModelConfig, with_reasoning: bool, seed: int = 0
) -> List[TokenSequence]:
    """One control sequence per demonstration step, carrying its action chunk."""
    rng = np.random.default_rng(seed)
    sequences = []
    for episode in dataset.episodes:
        chunks = episode.action_chunks(config.action_chunk_len)
        for step, chunk in zip(episode.steps, chunks):
            target = step.reasoning if with_reasoning and step.reasoning else None
            control_index = 1
            if config.n_control_experts > 1:
                control_index = int(rng.integers(1, config.n_control_experts + 1))
            sequences.append(
                TokenSequence.build(
                    step.image, TaskTag.CONTROL, step.instruction, target, chunk, control_index
                )
            )
    return sequences


def vt_sequences(dataset: VTDataset) -> List[TokenSequence]:
    return [
        TokenSequence.build(s.image, TaskTag.UNDERSTANDING, s.question, target=s.answer)
        for s in dataset.samples
    ]


class SampleStream:
    """Endless walk over a sequence list, reshuffled every epoch."""

    def __init__(self, items: Sequence[TokenSequence], rng: np.random.Generator):
        if not items:
            raise StageError("Cannot stream an empty dataset")
        self.items = items
        self.rng = rng
        self._order: List[int] = []

    def take(self, n: int) -> List[TokenSequence]:
        out = []
        while len(out) < n:
            if not self._order:
                self._order = [int(i) for i in self.rng.permutation(len(self.items))]
            out.append(self.items[self._order.pop(0)])
        return out


def robot_batches(robot_data: Sequence[TokenSequence], batch_size: int, seed: int) -> Iterator[Batch]:
    stream = SampleStream(robot_data, np.random.default_rng([seed, 0]))
    index = 0
    while True:
        yield Batch(ROBOT, stream.take(batch_size), index)
        index += 1


def mixing_schedule(ratio: Tuple[int, int], n_batches: int, seed: int) -> List[str]:
    """Batch kinds for n_batches positions at vt:robot = ratio."""
    a, b = int(ratio[0]), int(ratio[1])
    if a < 1 or b < 1:
        raise StageError(f"ratio components must be >= 1, got {ratio}")
    window = a + b
    tie_winner = VT if np.random.default_rng([seed, 1]).random() < 0.5 else ROBOT

    kinds: List[str] = []
    while len(kinds) < n_batches:
        vt_count = robot_count = 0
        for p in range(window):
            vt_deficit = a * (p + 1) - vt_count * window
            robot_deficit = b * (p + 1) - robot_count * window
            if vt_deficit > robot_deficit or (vt_deficit == robot_deficit and tie_winner == VT):
                kinds.append(VT)
                vt_count += 1
            else:
                kinds.append(ROBOT)
                robot_count += 1
        if (vt_count, robot_count) != (a, b):
            raise StageError(f"Interleave window produced {vt_count}:{robot_count}, expected {a}:{b}")
    return kinds[:n_batches]


def _schedule_stream(ratio: Tuple[int, int], seed: int) -> Iterator[str]:
    window = sum(ratio)
    while True:
        yield from mixing_schedule(ratio, window, seed)


def make_mixed_batches(
    robot_data: Sequence[TokenSequence],
    vt_data: Sequence[TokenSequence],
    ratio: Tuple[int, int],
    batch_size: int,
    seed: int,
) -> Iterator[Batch]:
    """Endless stream of task-pure batches following mixing_schedule."""
    if not robot_data or not vt_data:
        raise StageError(
            f"Mixed batches need robot and vt data (got {len(robot_data)} robot, {len(vt_data)} vt)"
        )
    robot_stream = SampleStream(robot_data, np.random.default_rng([seed, 0]))
    vt_stream = SampleStream(vt_data, np.random.default_rng([seed, 2]))
    for index, kind in enumerate(_schedule_stream(ratio, seed)):
        stream = vt_stream if kind == VT else robot_stream
        yield Batch(kind, stream.take(batch_size), index)


def take_batches(stream: Iterator[Batch], n: int) -> List[Batch]:
    return list(islice(stream, n))
