"""
Template reasoning attached to robot demonstrations.

    the <color> <shape> is at <row> <col> . the target is the <target> . i will <skill> it .

<target> is a receptacle name or "<color> cube" for stacking.
"""

import re
from dataclasses import dataclass
from typing import Optional

from src.worldsim.expert import subtask_focus
from src.worldsim.scene import Scene, grid_cell
from src.worldsim.tasks import TaskSpec
from src.worldsim.vocab import COLORS, COLUMNS, RECEPTACLES, ROWS, SHAPES, SKILLS

REASONING_TEMPLATE = (
    "the {color} {shape} is at {row} {col} . the target is the {target} . i will {skill} it ."
)


def _alt(words) -> str:
    return "|".join(re.escape(w) for w in words)


_PATTERN = re.compile(
    rf"^the (?P<color>{_alt(COLORS)}) (?P<shape>{_alt(SHAPES)}) is at "
    rf"(?P<row>{_alt(ROWS)}) (?P<col>{_alt(COLUMNS)}) \. "
    rf"the target is the (?P<target>{_alt(RECEPTACLES)}|(?:{_alt(COLORS)}) cube) \. "
    rf"i will (?P<skill>{_alt(SKILLS)}) it \.$"
)


@dataclass(frozen=True)
class ReasoningFields:
    color: str
    shape: str
    row: str
    col: str
    target: str
    skill: str


def reasoning_fields(scene: Scene, spec: TaskSpec, subtask_index: int) -> ReasoningFields:
    focus = subtask_focus(scene, spec, subtask_index)
    obj = scene.objects[focus.obj]
    row, col = grid_cell(obj.x, obj.y)
    return ReasoningFields(
        color=obj.color,
        shape=obj.shape,
        row=row,
        col=col,
        target=focus.target_text(scene),
        skill=spec.subtasks[subtask_index].skill,
    )


def format_reasoning(scene: Scene, spec: TaskSpec, subtask_index: int) -> str:
    fields = reasoning_fields(scene, spec, subtask_index)
    return REASONING_TEMPLATE.format(**fields.__dict__)


def parse_reasoning(text: str) -> Optional[ReasoningFields]:
    """Inverse of format_reasoning; None when text does not follow the template."""
    match = _PATTERN.match(text.strip())
    if match is None:
        return None
    return ReasoningFields(**match.groupdict())
