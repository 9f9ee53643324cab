"""
Kinematic 2-D tabletop. Scenes are immutable values; step_env returns a new
Scene. Coordinates live in [0, 1]^2 with y pointing up.
"""

import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

STEP_SCALE = 0.1
GRASP_RADIUS = 0.08
PUSH_RADIUS = 0.06
STACK_RADIUS = 0.06
GRIP_THRESHOLD = 0.5

HANDLE_ID = -1
HANDLE_GAP = 0.03
DRAWER_TRAVEL = 0.2
DRAWER_OPEN_AT = 0.15
DRAWER_CLOSED_AT = 0.05


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    x: float
    y: float
    on: Optional[int] = None

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def moved_to(self, x: float, y: float) -> "SceneObject":
        return replace(self, x=float(x), y=float(y))


@dataclass(frozen=True)
class Receptacle:
    name: str
    x0: float
    y0: float
    x1: float
    y1: float
    drawer_open: bool = False
    handle_offset: float = 0.0

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0])

    @property
    def handle_base_x(self) -> float:
        return self.x1 + HANDLE_GAP

    @property
    def handle_pos(self) -> np.ndarray:
        return np.array([self.handle_base_x + self.handle_offset, (self.y0 + self.y1) / 2.0])

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class Gripper:
    x: float
    y: float
    holding: Optional[int] = None

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Scene:
    objects: Tuple[SceneObject, ...] = ()
    receptacles: Tuple[Receptacle, ...] = ()
    gripper: Optional[Gripper] = None
    rng_seed: int = 0
    task_id: str = ""

    def receptacle(self, name: str) -> Optional[Receptacle]:
        for rec in self.receptacles:
            if rec.name == name:
                return rec
        return None

    @property
    def drawer(self) -> Optional[Receptacle]:
        return self.receptacle("drawer")

    def is_held(self, index: int) -> bool:
        return self.gripper is not None and self.gripper.holding == index

    def is_covered(self, index: int) -> bool:
        return any(obj.on == index for obj in self.objects)

    def in_region(self, index: int, name: str) -> bool:
        """Object rests (not held) with its center inside the receptacle rectangle."""
        rec = self.receptacle(name)
        obj = self.objects[index]
        return rec is not None and not self.is_held(index) and rec.contains(obj.x, obj.y)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objects": [asdict(o) for o in self.objects],
            "receptacles": [asdict(r) for r in self.receptacles],
            "gripper": asdict(self.gripper) if self.gripper else None,
            "rng_seed": self.rng_seed,
            "task_id": self.task_id,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        return cls(
            objects=tuple(SceneObject(**o) for o in data["objects"]),
            receptacles=tuple(Receptacle(**r) for r in data["receptacles"]),
            gripper=Gripper(**data["gripper"]) if data["gripper"] else None,
            rng_seed=data["rng_seed"],
            task_id=data["task_id"],
        )


def grid_cell(x: float, y: float) -> Tuple[str, str]:
    """(row, column) words of the 3x3 table grid containing (x, y)."""
    row = "top" if y >= 2.0 / 3.0 else "middle" if y >= 1.0 / 3.0 else "bottom"
    col = "left" if x < 1.0 / 3.0 else "center" if x < 2.0 / 3.0 else "right"
    return row, col


def _distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def _support_for(objects: Sequence[SceneObject], index: int, scene: Scene) -> Optional[int]:
    """Uncovered cube under a released cube, if any lies within STACK_RADIUS."""
    dropped = objects[index]
    if dropped.shape != "cube":
        return None
    best, best_dist = None, STACK_RADIUS
    for j, other in enumerate(objects):
        if j == index or other.shape != "cube":
            continue
        if any(o.on == j for k, o in enumerate(objects) if k != index):
            continue
        d = _distance(dropped.pos, other.pos)
        if d < best_dist:
            best, best_dist = j, d
    return best


def _grasp_candidate(scene: Scene, pos: np.ndarray) -> Optional[int]:
    best, best_dist = None, GRASP_RADIUS
    for i, obj in enumerate(scene.objects):
        d = _distance(pos, obj.pos)
        if d <= best_dist and (best is None or d < best_dist):
            best, best_dist = i, d
    drawer = scene.drawer
    if drawer is not None:
        d = _distance(pos, drawer.handle_pos)
        if d <= best_dist and (best is None or d < best_dist):
            best = HANDLE_ID
    return best


def _drag_drawer(drawer: Receptacle, gripper_x: float) -> Receptacle:
    offset = float(np.clip(gripper_x - drawer.handle_base_x, 0.0, DRAWER_TRAVEL))
    is_open = drawer.drawer_open
    if offset >= DRAWER_OPEN_AT:
        is_open = True
    elif offset <= DRAWER_CLOSED_AT:
        is_open = False
    return replace(drawer, handle_offset=offset, drawer_open=is_open)


def step_env(scene: Scene, action: Sequence[float]) -> Scene:
    """
    Advance the world by one action (dx, dy, grip).

    The gripper moves by STEP_SCALE * (dx, dy) clipped to the table. With an
    empty gripper and grip < -0.5 (push stance), blocks in contact ahead of
    the motion are displaced with it. A held object or drawer handle follows
    the gripper. grip > 0.5 then toggles: release what is held, or grasp the
    nearest object/handle within GRASP_RADIUS.
    """
    a = np.nan_to_num(np.asarray(action, dtype=np.float64), nan=0.0, posinf=1.0, neginf=-1.0)
    dx, dy, grip = np.clip(a, -1.0, 1.0)
    if dx == 0.0 and dy == 0.0 and grip == 0.0:
        return scene

    gripper = scene.gripper
    old = gripper.pos
    new = np.clip(old + STEP_SCALE * np.array([dx, dy]), 0.0, 1.0)
    displacement = new - old
    objects = list(scene.objects)
    receptacles = list(scene.receptacles)
    holding = gripper.holding

    if holding is None and grip < -GRIP_THRESHOLD and np.any(displacement):
        for i, obj in enumerate(objects):
            if obj.shape != "block" or obj.on is not None:
                continue
            ahead = float(np.dot(obj.pos - old, displacement)) > 0.0
            if ahead and _distance(new, obj.pos) < PUSH_RADIUS:
                moved = np.clip(obj.pos + displacement, 0.0, 1.0)
                objects[i] = obj.moved_to(*moved)

    if holding is not None and holding >= 0:
        objects[holding] = objects[holding].moved_to(*new)
    elif holding == HANDLE_ID:
        receptacles = [
            _drag_drawer(r, new[0]) if r.name == "drawer" else r for r in receptacles
        ]

    if grip > GRIP_THRESHOLD:
        if holding is not None:
            if holding >= 0:
                support = _support_for(objects, holding, scene)
                objects[holding] = replace(objects[holding], on=support)
            holding = None
        else:
            moved_scene = replace(scene, objects=tuple(objects), receptacles=tuple(receptacles))
            candidate = _grasp_candidate(moved_scene, new)
            if candidate is not None:
                holding = candidate
                if candidate >= 0:
                    objects[candidate] = replace(objects[candidate], on=None)

    return replace(
        scene,
        objects=tuple(objects),
        receptacles=tuple(receptacles),
        gripper=Gripper(float(new[0]), float(new[1]), holding),
    )
