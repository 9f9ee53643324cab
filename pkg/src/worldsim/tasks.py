"""
Task registry: eight toy manipulation tasks, their spawn layouts,
instruction templates and per-sub-task success predicates.

Object indices inside a task scene are fixed by the layout, so predicates
refer to objects by index. Instruction templates are formatted with the
scene objects as positional arguments ("{0.color}" is object 0's color).
"""

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.worldsim.scene import Gripper, Receptacle, Scene, SceneObject
from src.worldsim.vocab import COLORS


class UnknownTaskError(ValueError):
    """Raised when a task id is not registered"""

    def __init__(self, task_id: str):
        self.task_id = task_id
        super().__init__(f"Unknown task_id: {task_id!r} (known: {', '.join(TASKS)})")


MIN_SPAWN_DISTANCE = 0.15
ROBOT_SPAWN_BAND = ((0.08, 0.92), (0.34, 0.60))
GRIPPER_SPAWN_BAND = ((0.05, 0.95), (0.05, 0.95))
MAX_SPAWN_TRIES = 10_000

BOX = Receptacle("box", 0.05, 0.65, 0.30, 0.90)
BASKET = Receptacle("basket", 0.70, 0.65, 0.95, 0.90)
DRAWER = Receptacle("drawer", 0.35, 0.03, 0.65, 0.25)
RECEPTACLES = (BOX, BASKET, DRAWER)


# Predicates


class Predicate(ABC):
    @abstractmethod
    def __call__(self, scene: Scene) -> bool:
        pass


@dataclass(frozen=True)
class ObjectInRegion(Predicate):
    obj: int
    region: str

    def __call__(self, scene: Scene) -> bool:
        if not scene.in_region(self.obj, self.region):
            return False
        if self.region == "drawer":
            return scene.drawer is not None and scene.drawer.drawer_open
        return True


@dataclass(frozen=True)
class DrawerState(Predicate):
    """Drawer open/closed; with obj set, the object must also rest inside it."""

    is_open: bool
    obj: Optional[int] = None

    def __call__(self, scene: Scene) -> bool:
        drawer = scene.drawer
        if drawer is None or drawer.drawer_open != self.is_open:
            return False
        return self.obj is None or scene.in_region(self.obj, "drawer")


@dataclass(frozen=True)
class StackOrder(Predicate):
    top: int
    bottom: int

    def __call__(self, scene: Scene) -> bool:
        return not scene.is_held(self.top) and scene.objects[self.top].on == self.bottom


@dataclass(frozen=True)
class SortedCount(Predicate):
    """At least k + 1 toys rest in their assigned receptacle, in any order."""

    k: int
    assignments: Tuple[Tuple[int, str], ...]

    def __call__(self, scene: Scene) -> bool:
        return sorted_toys(scene, self.assignments) >= self.k + 1


def sorted_toys(scene: Scene, assignments: Sequence[Tuple[int, str]]) -> int:
    return sum(1 for obj, region in assignments if scene.in_region(obj, region))


# Task specs


@dataclass(frozen=True)
class Subtask:
    predicate: Predicate
    skill: str
    instruction: Optional[str] = None


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    skill: str
    layout: Tuple[str, ...]
    instruction_template: str
    subtasks: Tuple[Subtask, ...]
    planner: bool = False

    @property
    def n_subtasks(self) -> int:
        return len(self.subtasks)

    def instruction(self, scene: Scene, subtask_index: int = 0) -> str:
        """Instruction text; planner tasks issue one instruction per sub-task."""
        template = self.instruction_template
        if self.planner and self.subtasks[subtask_index].instruction:
            template = self.subtasks[subtask_index].instruction
        return template.format(*scene.objects)

    def is_done(self, scene: Scene, subtask_index: int) -> bool:
        return self.subtasks[subtask_index].predicate(scene)


SORT_ASSIGNMENTS = ((0, "box"), (1, "box"), (2, "basket"), (3, "basket"))


def _build_registry() -> Dict[str, TaskSpec]:
    specs = [
        TaskSpec(
            "pick_cube_box",
            "pick-place",
            ("cube",),
            "put the {0.color} cube in the box",
            (Subtask(ObjectInRegion(0, "box"), "pick-place"),),
        ),
        TaskSpec(
            "pick_ball_basket",
            "pick-place",
            ("ball",),
            "put the {0.color} ball in the basket",
            (Subtask(ObjectInRegion(0, "basket"), "pick-place"),),
        ),
        TaskSpec(
            "push_block_box",
            "push",
            ("block",),
            "push the {0.color} block to the box",
            (Subtask(ObjectInRegion(0, "box"), "push"),),
        ),
        TaskSpec(
            "stack_cubes",
            "stack",
            ("cube", "cube", "cube"),
            "stack the {0.color} and {1.color} cube on the {2.color} cube",
            (
                Subtask(StackOrder(0, 2), "stack"),
                Subtask(StackOrder(1, 0), "stack"),
            ),
        ),
        TaskSpec(
            "sort_toys",
            "sort",
            ("cube", "cube", "ball", "ball", "block"),
            "sort the toys",
            tuple(Subtask(SortedCount(k, SORT_ASSIGNMENTS), "sort") for k in range(4)),
        ),
        TaskSpec(
            "drawer_toy",
            "open-close",
            ("ball",),
            "put the {0.color} ball in the drawer",
            (
                Subtask(DrawerState(True), "open-close"),
                Subtask(ObjectInRegion(0, "drawer"), "pick-place"),
                Subtask(DrawerState(False, obj=0), "open-close"),
            ),
        ),
        TaskSpec(
            "planner_block_drawer",
            "pick-place",
            ("block", "ball"),
            "move the {0.color} block to the basket",
            (
                Subtask(ObjectInRegion(0, "basket"), "pick-place", "move the {0.color} block to the basket"),
                Subtask(DrawerState(True), "open-close", "open the drawer"),
                Subtask(ObjectInRegion(1, "drawer"), "pick-place", "put the {1.color} ball in the drawer"),
                Subtask(DrawerState(False, obj=1), "open-close", "close the drawer"),
            ),
            planner=True,
        ),
        TaskSpec(
            "planner_two_blocks",
            "pick-place",
            ("block", "block"),
            "move the {0.color} block to the basket",
            (
                Subtask(ObjectInRegion(0, "basket"), "pick-place", "move the {0.color} block to the basket"),
                Subtask(ObjectInRegion(1, "basket"), "pick-place", "move the {1.color} block to the basket"),
            ),
            planner=True,
        ),
    ]
    return {spec.task_id: spec for spec in specs}


TASKS: Dict[str, TaskSpec] = _build_registry()


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise UnknownTaskError(task_id) from None


def resolve_task_ids(task_ids: Sequence[str]) -> List[str]:
    """Expand "all" and validate every id."""
    resolved: List[str] = []
    for task_id in task_ids:
        if task_id == "all":
            resolved.extend(t for t in TASKS if t not in resolved)
        elif task_id not in resolved:
            get_task(task_id)
            resolved.append(task_id)
    return resolved


def registry_hash() -> str:
    """Stable digest of task ids, layouts, templates and sub-task predicates."""
    description = [
        {
            "task_id": spec.task_id,
            "layout": list(spec.layout),
            "instruction": spec.instruction_template,
            "subtasks": [repr(s) for s in spec.subtasks],
        }
        for spec in TASKS.values()
    ]
    text = json.dumps(description, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# Scene generation


def spawn_positions(
    rng: np.random.Generator,
    n: int,
    band: Tuple[Tuple[float, float], Tuple[float, float]] = ROBOT_SPAWN_BAND,
) -> List[Tuple[float, float]]:
    """Rejection-sample n centers with pairwise distance >= MIN_SPAWN_DISTANCE."""
    (x0, x1), (y0, y1) = band
    points: List[Tuple[float, float]] = []
    tries = 0
    while len(points) < n:
        tries += 1
        if tries > MAX_SPAWN_TRIES:
            raise RuntimeError(f"Could not place {n} objects in band {band}")
        p = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        if all(np.hypot(p[0] - q[0], p[1] - q[1]) >= MIN_SPAWN_DISTANCE for q in points):
            points.append(p)
    return points


def _layout_colors(rng: np.random.Generator, layout: Sequence[str]) -> List[str]:
    """Distinct colors among objects of the same shape."""
    colors: List[Optional[str]] = [None] * len(layout)
    for shape in dict.fromkeys(layout):
        slots = [i for i, s in enumerate(layout) if s == shape]
        picks = rng.choice(len(COLORS), size=len(slots), replace=False)
        for slot, pick in zip(slots, picks):
            colors[slot] = COLORS[int(pick)]
    return colors


def generate_scene(task_id: str, rng_seed: int) -> Scene:
    """Deterministic spawn for (task_id, rng_seed)."""
    spec = get_task(task_id)
    rng = np.random.default_rng(rng_seed)
    colors = _layout_colors(rng, spec.layout)
    positions = spawn_positions(rng, len(spec.layout))
    objects = tuple(
        SceneObject(shape, color, x, y)
        for shape, color, (x, y) in zip(spec.layout, colors, positions)
    )
    (gx0, gx1), (gy0, gy1) = GRIPPER_SPAWN_BAND
    gripper = Gripper(float(rng.uniform(gx0, gx1)), float(rng.uniform(gy0, gy1)))
    return Scene(objects, RECEPTACLES, gripper, rng_seed, task_id)
