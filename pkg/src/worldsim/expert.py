"""
Scripted expert: a proportional controller that solves every registered
sub-task from any valid spawn.

Pick-place style sub-tasks approach the object, grasp, carry it to a slot of
the goal region and release. Push sub-tasks approach a stand-off point behind
the block with the gripper open, then advance in push stance (grip = -1)
along the block-to-goal direction. Drawer sub-tasks grasp the handle and drag
it to the open or closed end of its travel.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.worldsim.scene import (
    DRAWER_TRAVEL,
    HANDLE_ID,
    STEP_SCALE,
    Scene,
)
from src.worldsim.tasks import (
    DrawerState,
    ObjectInRegion,
    SortedCount,
    StackOrder,
    TaskSpec,
)

NO_OP = np.zeros(3)
SLOT_OFFSETS = ((-0.05, 0.04), (0.05, 0.04), (-0.05, -0.04), (0.05, -0.04))
PUSH_STANDOFF = 0.05
ARRIVE_TOL = 1e-6


@dataclass(frozen=True)
class Focus:
    """Object a sub-task is about and where it has to go."""

    obj: int
    region: Optional[str] = None
    support: Optional[int] = None

    def target_text(self, scene: Scene) -> str:
        if self.support is not None:
            return f"{scene.objects[self.support].color} cube"
        return self.region


def _drawer_object(spec: TaskSpec) -> int:
    for subtask in spec.subtasks:
        pred = subtask.predicate
        if isinstance(pred, ObjectInRegion) and pred.region == "drawer":
            return pred.obj
    return 0


def subtask_focus(scene: Scene, spec: TaskSpec, subtask_index: int) -> Focus:
    pred = spec.subtasks[subtask_index].predicate
    if isinstance(pred, ObjectInRegion):
        return Focus(pred.obj, region=pred.region)
    if isinstance(pred, StackOrder):
        return Focus(pred.top, support=pred.bottom)
    if isinstance(pred, DrawerState):
        obj = pred.obj if pred.obj is not None else _drawer_object(spec)
        return Focus(obj, region="drawer")
    if isinstance(pred, SortedCount):
        pending = [(o, r) for o, r in pred.assignments if not scene.in_region(o, r)]
        if not pending:
            return Focus(pred.assignments[0][0], region=pred.assignments[0][1])
        held = scene.gripper.holding if scene.gripper else None
        for obj, region in pending:
            if obj == held:
                return Focus(obj, region=region)
        g = scene.gripper.pos
        obj, region = min(
            pending, key=lambda item: float(np.linalg.norm(scene.objects[item[0]].pos - g))
        )
        return Focus(obj, region=region)
    raise TypeError(f"No expert for predicate {pred!r}")


def place_point(scene: Scene, region: str, obj: int) -> np.ndarray:
    """Free slot of a region; slots are far enough apart that cubes never stack."""
    rec = scene.receptacle(region)
    occupied = sum(
        1 for i, o in enumerate(scene.objects) if i != obj and rec.contains(o.x, o.y)
    )
    return rec.center + np.array(SLOT_OFFSETS[occupied % len(SLOT_OFFSETS)])


def _move(g: np.ndarray, target: np.ndarray, grip: float = 0.0) -> np.ndarray:
    step = np.clip((target - g) / STEP_SCALE, -1.0, 1.0)
    return np.array([step[0], step[1], grip])


def _reachable(g: np.ndarray, target: np.ndarray) -> bool:
    return float(np.max(np.abs(target - g))) <= STEP_SCALE + 1e-12


def _approach_and_toggle(g: np.ndarray, target: np.ndarray) -> np.ndarray:
    return _move(g, target, 1.0 if _reachable(g, target) else 0.0)


def _drawer_action(scene: Scene, pred: DrawerState) -> np.ndarray:
    g = scene.gripper
    drawer = scene.drawer
    if g.holding is not None and g.holding != HANDLE_ID:
        return np.array([0.0, 0.0, 1.0])
    if g.holding == HANDLE_ID:
        goal_x = drawer.handle_base_x + (DRAWER_TRAVEL if pred.is_open else 0.0)
        return _move(g.pos, np.array([goal_x, drawer.handle_pos[1]]))
    return _approach_and_toggle(g.pos, drawer.handle_pos)


def _push_action(scene: Scene, focus: Focus) -> np.ndarray:
    g = scene.gripper
    if g.holding is not None:
        return np.array([0.0, 0.0, 1.0])
    block = scene.objects[focus.obj].pos
    goal = scene.receptacle(focus.region).center
    delta = goal - block
    dist = float(np.linalg.norm(delta))
    u = delta / dist
    approach = block - PUSH_STANDOFF * u
    if float(np.linalg.norm(g.pos - approach)) > ARRIVE_TOL:
        return _move(g.pos, approach)
    stride = min(1.0, dist / STEP_SCALE)
    return np.array([u[0] * stride, u[1] * stride, -1.0])


def _carry_action(scene: Scene, focus: Focus) -> np.ndarray:
    g = scene.gripper
    if g.holding is not None and g.holding != focus.obj:
        return np.array([0.0, 0.0, 1.0])
    if g.holding == focus.obj:
        if focus.support is not None:
            goal = scene.objects[focus.support].pos
        else:
            goal = place_point(scene, focus.region, focus.obj)
        return _approach_and_toggle(g.pos, goal)
    return _approach_and_toggle(g.pos, scene.objects[focus.obj].pos)


def expert_action(scene: Scene, spec: TaskSpec, subtask_index: int) -> np.ndarray:
    """Next (dx, dy, grip) for the given sub-task; no-op once it is satisfied."""
    if spec.is_done(scene, subtask_index):
        return NO_OP.copy()
    subtask = spec.subtasks[subtask_index]
    if isinstance(subtask.predicate, DrawerState):
        return _drawer_action(scene, subtask.predicate)
    focus = subtask_focus(scene, spec, subtask_index)
    if subtask.skill == "push":
        return _push_action(scene, focus)
    return _carry_action(scene, focus)

