"""
Demonstration and visual-text datasets, and their line-delimited files.

File layout: the first line is a header record
    {"type": "header", "kind": "robot"|"vt", "format_version": 1,
     "vocab_hash": ..., "task_registry_hash": ..., "image_encoding": ...}
followed by one record per episode ("episode") and per step ("step") for
robot files, or one "sample" record per VTSample for vt files. Images are
either base-64 encoded row-major uint8 triples or inline float arrays.
"""

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.logger import setup_logger
from src.worldsim.expert import expert_action
from src.worldsim.questions import VTSample
from src.worldsim.reasoning import format_reasoning
from src.worldsim.render import IMAGE_SIDE, render
from src.worldsim.scene import Scene, step_env
from src.worldsim.tasks import generate_scene, get_task, registry_hash, resolve_task_ids
from src.worldsim.vocab import vocab_hash

logger = setup_logger()

FORMAT_VERSION = 1
IMAGE_ENCODINGS = ("base64", "float")
SUBTASK_STEP_BUDGET = 80
TRAIN_SEED_STRIDE = 100_000


class DatasetFormatError(ValueError):
    """Raised when a dataset file is malformed or incompatible"""

    pass


@dataclass(frozen=True)
class Step:
    image: np.ndarray = field(repr=False, compare=False)
    instruction: str
    action: Tuple[float, float, float]
    subtask: int
    reasoning: Optional[str] = None


@dataclass
class Episode:
    task_id: str
    seed: int
    initial_scene: Scene
    steps: List[Step] = field(default_factory=list)
    step_boundaries: List[int] = field(default_factory=list)
    success: List[bool] = field(default_factory=list)

    @property
    def actions(self) -> np.ndarray:
        return np.array([s.action for s in self.steps], dtype=np.float64).reshape(-1, 3)

    def action_chunks(self, chunk_len: int) -> np.ndarray:
        """Sliding windows [n_steps, chunk_len, 3]; past the end actions are zero."""
        actions = self.actions
        padded = np.concatenate([actions, np.zeros((chunk_len - 1, 3))], axis=0)
        return np.stack([padded[j:j + chunk_len] for j in range(len(actions))])


@dataclass
class RobotDataset:
    episodes: List[Episode]
    with_reasoning: bool = False

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def n_steps(self) -> int:
        return sum(len(e.steps) for e in self.episodes)


@dataclass
class VTDataset:
    samples: List[VTSample]

    def __len__(self) -> int:
        return len(self.samples)


def train_scene_seed(base_seed: int, index: int) -> int:
    return base_seed * TRAIN_SEED_STRIDE + index


def run_expert_episode(
    task_id: str,
    seed: int,
    with_reasoning: bool = False,
    step_budget: int = SUBTASK_STEP_BUDGET,
) -> Episode:
    """Roll the scripted expert closed-loop, recording one Step per env step."""
    spec = get_task(task_id)
    scene = generate_scene(task_id, seed)
    episode = Episode(task_id, seed, scene)

    for k in range(spec.n_subtasks):
        used = 0
        while not spec.is_done(scene, k) and used < step_budget:
            action = expert_action(scene, spec, k)
            episode.steps.append(
                Step(
                    image=render(scene),
                    instruction=spec.instruction(scene, k),
                    action=tuple(float(a) for a in action),
                    subtask=k,
                    reasoning=format_reasoning(scene, spec, k) if with_reasoning else None,
                )
            )
            scene = step_env(scene, action)
            used += 1
        done = spec.is_done(scene, k)
        episode.success.append(done)
        episode.step_boundaries.append(len(episode.steps))
        if not done:
            logger.warning(f"Expert failed sub-task {k} of {task_id} (seed {seed})")
            break
    return episode


def replay_episode(episode: Episode) -> List[bool]:
    """Re-execute recorded actions from the initial scene; returns success flags."""
    spec = get_task(episode.task_id)
    scene = episode.initial_scene
    flags: List[bool] = []
    start = 0
    for k, end in enumerate(episode.step_boundaries):
        for step in episode.steps[start:end]:
            scene = step_env(scene, step.action)
        flags.append(spec.is_done(scene, k))
        start = end
    return flags


def gen_demonstrations(
    task_ids: Sequence[str], n_per_task: int, with_reasoning: bool, rng_seed: int
) -> RobotDataset:
    """n_per_task expert episodes per task; scene seeds never collide with eval seeds."""
    if n_per_task < 1:
        raise ValueError(f"n_per_task must be >= 1, got {n_per_task}")
    episodes = []
    for task_index, task_id in enumerate(resolve_task_ids(task_ids)):
        for i in range(n_per_task):
            seed = train_scene_seed(rng_seed, task_index * n_per_task + i)
            episodes.append(run_expert_episode(task_id, seed, with_reasoning))
    logger.info(
        f"Generated {len(episodes)} demonstrations "
        f"({sum(len(e.steps) for e in episodes)} steps, reasoning={with_reasoning})"
    )
    return RobotDataset(episodes, with_reasoning)


# Serialization


def encode_image(image: np.ndarray, encoding: str) -> Union[str, list]:
    if encoding == "base64":
        raw = np.round(image * 255.0).astype(np.uint8).tobytes()
        return base64.b64encode(raw).decode("ascii")
    return image.tolist()


def decode_image(payload: Union[str, list], encoding: str) -> np.ndarray:
    try:
        if encoding == "base64":
            raw = np.frombuffer(base64.b64decode(payload), dtype=np.uint8)
            return raw.reshape(IMAGE_SIDE, IMAGE_SIDE, 3).astype(np.float64) / 255.0
        return np.array(payload, dtype=np.float64).reshape(IMAGE_SIDE, IMAGE_SIDE, 3)
    except (ValueError, TypeError) as e:
        raise DatasetFormatError(f"Bad image payload ({encoding}): {e}") from e


def _header(kind: str, encoding: str) -> Dict[str, Any]:
    if encoding not in IMAGE_ENCODINGS:
        raise DatasetFormatError(f"image_encoding must be one of {IMAGE_ENCODINGS}, got {encoding!r}")
    return {
        "type": "header",
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "vocab_hash": vocab_hash(),
        "task_registry_hash": registry_hash(),
        "image_encoding": encoding,
    }


def _robot_records(dataset: RobotDataset, encoding: str) -> Iterator[Dict[str, Any]]:
    yield {**_header("robot", encoding), "with_reasoning": dataset.with_reasoning}
    for index, episode in enumerate(dataset.episodes):
        yield {
            "type": "episode",
            "episode": index,
            "task_id": episode.task_id,
            "seed": episode.seed,
            "initial_scene": episode.initial_scene.to_dict(),
            "step_boundaries": episode.step_boundaries,
            "success": episode.success,
            "n_steps": len(episode.steps),
        }
        for t, step in enumerate(episode.steps):
            yield {
                "type": "step",
                "episode": index,
                "t": t,
                "image": encode_image(step.image, encoding),
                "instruction": step.instruction,
                "action": list(step.action),
                "subtask": step.subtask,
                "reasoning": step.reasoning,
            }


def _vt_records(dataset: VTDataset, encoding: str) -> Iterator[Dict[str, Any]]:
    yield _header("vt", encoding)
    for sample in dataset.samples:
        yield {
            "type": "sample",
            "image": encode_image(sample.image, encoding),
            "question": sample.question,
            "answer": sample.answer,
            "category": sample.category,
            "scene": sample.scene.to_dict() if sample.scene else None,
        }


def save_dataset(dataset: Union[RobotDataset, VTDataset], path, encoding: str = "base64") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = (
        _robot_records(dataset, encoding)
        if isinstance(dataset, RobotDataset)
        else _vt_records(dataset, encoding)
    )
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    logger.info(f"Wrote {len(dataset)} records to {path}")
    return path


def _read_records(path: Path) -> Iterator[Dict[str, Any]]:
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON: {e}") from e


def _check_header(header: Dict[str, Any], path: Path):
    if header.get("type") != "header":
        raise DatasetFormatError(f"{path}: first record must be a header")
    if header.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: format_version {header.get('format_version')} != {FORMAT_VERSION}"
        )
    if header.get("vocab_hash") != vocab_hash():
        raise DatasetFormatError(
            f"{path}: vocab_hash {header.get('vocab_hash')} does not match {vocab_hash()}"
        )
    if header.get("image_encoding") not in IMAGE_ENCODINGS:
        raise DatasetFormatError(f"{path}: unknown image_encoding {header.get('image_encoding')!r}")
    if header.get("kind") == "robot" and header.get("task_registry_hash") != registry_hash():
        logger.warning(f"{path}: task registry changed since the file was written")


def load_dataset(path) -> Union[RobotDataset, VTDataset]:
    """Load a robot or vt file; rejects format or vocabulary mismatches."""
    path = Path(path)
    try:
        records = _read_records(path)
        header = next(records, None)
        if header is None:
            raise DatasetFormatError(f"{path}: empty file")
        _check_header(header, path)
        encoding = header["image_encoding"]

        if header["kind"] == "vt":
            samples = []
            for rec in records:
                scene = Scene.from_dict(rec["scene"]) if rec.get("scene") else None
                samples.append(
                    VTSample(
                        decode_image(rec["image"], encoding),
                        rec["question"],
                        rec["answer"],
                        rec["category"],
                        scene,
                    )
                )
            return VTDataset(samples)

        episodes: List[Episode] = []
        declared: List[int] = []
        for rec in records:
            if rec["type"] == "episode":
                episodes.append(
                    Episode(
                        rec["task_id"],
                        rec["seed"],
                        Scene.from_dict(rec["initial_scene"]),
                        step_boundaries=list(rec["step_boundaries"]),
                        success=list(rec["success"]),
                    )
                )
                declared.append(int(rec["n_steps"]))
            elif rec["type"] == "step":
                episodes[rec["episode"]].steps.append(
                    Step(
                        image=decode_image(rec["image"], encoding),
                        instruction=rec["instruction"],
                        action=tuple(rec["action"]),
                        subtask=rec["subtask"],
                        reasoning=rec.get("reasoning"),
                    )
                )
            else:
                raise DatasetFormatError(f"{path}: unexpected record type {rec['type']!r}")
        for index, (episode, expected) in enumerate(zip(episodes, declared)):
            if len(episode.steps) != expected:
                raise DatasetFormatError(
                    f"{path}: episode {index} declares {expected} steps but has {len(episode.steps)}"
                )
        return RobotDataset(episodes, bool(header.get("with_reasoning", False)))

    except (KeyError, IndexError) as e:
        logger.error(f"Malformed dataset {path}: missing {e}")
        raise DatasetFormatError(f"{path}: malformed record, missing {e}") from e
