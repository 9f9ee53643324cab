"""
Synthetic visual question answering over object-only scenes.

Four categories, assigned round-robin so any n is balanced to within one:
  color      "what color is the <shape>"      (the shape is unique in the scene)
  count      "how many <color> objects"       -> number word
  spatial    "where is the <color> <shape>"   -> "<row> <col>"
  existence  "is there a <color> <shape>"     -> yes / no, alternating
"""

import itertools
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.worldsim.render import render
from src.worldsim.scene import Scene, SceneObject, grid_cell
from src.worldsim.tasks import spawn_positions
from src.worldsim.vocab import COLORS, COLUMNS, NUMBERS, ROWS, SHAPES

CATEGORIES = ("color", "count", "spatial", "existence")
VT_SPAWN_BAND = ((0.08, 0.92), (0.08, 0.92))
MAX_VT_OBJECTS = 4

ANSWER_SETS: Dict[str, Tuple[str, ...]] = {
    "color": COLORS,
    "count": NUMBERS,
    "spatial": tuple(f"{r} {c}" for r in ROWS for c in COLUMNS),
    "existence": ("yes", "no"),
}

_PAIRS = tuple(itertools.product(COLORS, SHAPES))

_QUESTION_PATTERNS = {
    "color": re.compile(r"^what color is the (?P<shape>\w+)$"),
    "count": re.compile(r"^how many (?P<color>\w+) objects$"),
    "spatial": re.compile(r"^where is the (?P<color>\w+) (?P<shape>\w+)$"),
    "existence": re.compile(r"^is there a (?P<color>\w+) (?P<shape>\w+)$"),
}


@dataclass(frozen=True)
class VTSample:
    image: np.ndarray = field(repr=False, compare=False)
    question: str
    answer: str
    category: str
    scene: Optional[Scene] = field(default=None, compare=False)


def chance_accuracy(category: str) -> float:
    return 1.0 / len(ANSWER_SETS[category])


def answer_question(scene: Scene, question: str) -> Tuple[str, str]:
    """Closed-form ground truth: returns (category, answer)."""
    for category, pattern in _QUESTION_PATTERNS.items():
        match = pattern.match(question.strip())
        if match is None:
            continue
        want = match.groupdict()
        hits = [
            o for o in scene.objects
            if all(getattr(o, key) == value for key, value in want.items())
        ]
        if category == "color":
            if len(hits) != 1:
                raise ValueError(f"Shape {want['shape']!r} is not unique in the scene")
            return category, hits[0].color
        if category == "count":
            return category, NUMBERS[len(hits)]
        if category == "spatial":
            if not hits:
                raise ValueError(f"No {want['color']} {want['shape']} in the scene")
            return category, " ".join(grid_cell(hits[0].x, hits[0].y))
        return category, "yes" if hits else "no"
    raise ValueError(f"Unrecognized question: {question!r}")


def _pick(rng: np.random.Generator, pool: Sequence, k: int) -> List:
    if k == 0:
        return []
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in idx]


def _scene_for(rng: np.random.Generator, category: str, index: int) -> Tuple[Scene, str]:
    """Build a scene tailored to the category and return it with its question."""
    if category == "color":
        color, shape = _PAIRS[int(rng.integers(len(_PAIRS)))]
        others = [p for p in _PAIRS if p[1] != shape]
        pairs = [(color, shape)] + _pick(rng, others, int(rng.integers(0, MAX_VT_OBJECTS)))
        question = f"what color is the {shape}"
    elif category == "count":
        color = COLORS[int(rng.integers(len(COLORS)))]
        k = int(rng.integers(0, len(SHAPES) + 1))
        pairs = [(color, s) for s in _pick(rng, SHAPES, k)]
        others = [p for p in _PAIRS if p[0] != color]
        n_other = int(rng.integers(max(0, 1 - k), MAX_VT_OBJECTS - k + 1))
        pairs += _pick(rng, others, n_other)
        question = f"how many {color} objects"
    elif category == "spatial":
        color, shape = _PAIRS[int(rng.integers(len(_PAIRS)))]
        others = [p for p in _PAIRS if p != (color, shape)]
        pairs = [(color, shape)] + _pick(rng, others, int(rng.integers(0, MAX_VT_OBJECTS)))
        question = f"where is the {color} {shape}"
    else:
        color, shape = _PAIRS[int(rng.integers(len(_PAIRS)))]
        others = [p for p in _PAIRS if p != (color, shape)]
        present = (index // len(CATEGORIES)) % 2 == 0
        if present:
            pairs = [(color, shape)] + _pick(rng, others, int(rng.integers(0, MAX_VT_OBJECTS)))
        else:
            pairs = _pick(rng, others, int(rng.integers(1, MAX_VT_OBJECTS + 1)))
        question = f"is there a {color} {shape}"

    order = rng.permutation(len(pairs))
    pairs = [pairs[int(i)] for i in order]
    positions = spawn_positions(rng, len(pairs), VT_SPAWN_BAND)
    objects = tuple(SceneObject(s, c, x, y) for (c, s), (x, y) in zip(pairs, positions))
    return Scene(objects=objects, rng_seed=index, task_id="vqa"), question


def make_vt_sample(rng: np.random.Generator, index: int, category: Optional[str] = None) -> VTSample:
    category = category or CATEGORIES[index % len(CATEGORIES)]
    scene, question = _scene_for(rng, category, index)
    _, answer = answer_question(scene, question)
    return VTSample(render(scene), question, answer, category, scene)


def gen_vt_samples(n: int, rng_seed: int) -> List[VTSample]:
    """n samples, categories round-robin, answers from the scene's ground truth."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(rng_seed)
    return [make_vt_sample(rng, i) for i in range(n)]
