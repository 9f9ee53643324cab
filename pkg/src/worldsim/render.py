"""
Rasterize scenes to 32x32x3 float images and to ASCII frames.

All palette entries are multiples of 1/255 so images survive the uint8
base-64 dataset encoding exactly.
"""

from typing import Dict, List, Tuple

import numpy as np

from src.worldsim.scene import HANDLE_ID, Scene, SceneObject

IMAGE_SIDE = 32


def _rgb(r: int, g: int, b: int) -> np.ndarray:
    return np.array([r, g, b], dtype=np.float64) / 255.0


BACKGROUND = _rgb(235, 235, 225)
OBJECT_COLORS: Dict[str, np.ndarray] = {
    "red": _rgb(220, 40, 40),
    "green": _rgb(40, 170, 60),
    "blue": _rgb(40, 80, 220),
    "yellow": _rgb(230, 200, 30),
}
RECEPTACLE_COLORS: Dict[str, np.ndarray] = {
    "box": _rgb(140, 90, 40),
    "basket": _rgb(150, 110, 190),
    "drawer": _rgb(90, 90, 90),
}
DRAWER_INTERIOR = _rgb(190, 190, 190)
HANDLE_COLOR = _rgb(20, 20, 20)
GRIPPER_OPEN = _rgb(0, 0, 0)
GRIPPER_CLOSED = _rgb(255, 255, 255)


def to_pixel(x: float, y: float, side: int = IMAGE_SIDE) -> Tuple[int, int]:
    """(row, col) of a table point; row 0 is the far (top) edge."""
    col = min(side - 1, max(0, int(x * side)))
    row = min(side - 1, max(0, int((1.0 - y) * side)))
    return row, col


def object_footprint(obj: SceneObject, side: int = IMAGE_SIDE) -> np.ndarray:
    """Boolean mask of the pixels an object covers."""
    row, col = to_pixel(obj.x, obj.y, side)
    rr, cc = np.mgrid[0:side, 0:side]
    if obj.shape == "ball":
        return (rr - row) ** 2 + (cc - col) ** 2 <= 4
    if obj.shape == "block":
        return (np.abs(rr - row) <= 1) & (np.abs(cc - col) <= 2)
    return (np.abs(rr - row) <= 1) & (np.abs(cc - col) <= 1)


def _stack_height(objects: Tuple[SceneObject, ...], index: int) -> int:
    height, seen = 0, set()
    while objects[index].on is not None and index not in seen:
        seen.add(index)
        index = objects[index].on
        height += 1
    return height


def render(scene: Scene, side: int = IMAGE_SIDE) -> np.ndarray:
    """
    Draw receptacle outlines (drawer interior filled when open), the drawer
    handle, objects from the bottom of any stack upwards (held object last)
    and finally the gripper marker.
    """
    image = np.empty((side, side, 3), dtype=np.float64)
    image[:] = BACKGROUND

    for rec in scene.receptacles:
        r0, c0 = to_pixel(rec.x0, rec.y1, side)
        r1, c1 = to_pixel(rec.x1, rec.y0, side)
        if rec.name == "drawer" and rec.drawer_open:
            image[r0:r1 + 1, c0:c1 + 1] = DRAWER_INTERIOR
        color = RECEPTACLE_COLORS.get(rec.name, HANDLE_COLOR)
        image[r0, c0:c1 + 1] = color
        image[r1, c0:c1 + 1] = color
        image[r0:r1 + 1, c0] = color
        image[r0:r1 + 1, c1] = color
        if rec.name == "drawer":
            hr, hc = to_pixel(*rec.handle_pos, side)
            image[max(0, hr - 1):hr + 1, hc:hc + 2] = HANDLE_COLOR

    holding = scene.gripper.holding if scene.gripper else None
    order = sorted(
        range(len(scene.objects)),
        key=lambda i: (i == holding, _stack_height(scene.objects, i), i),
    )
    for i in order:
        obj = scene.objects[i]
        image[object_footprint(obj, side)] = OBJECT_COLORS[obj.color]

    if scene.gripper is not None:
        g = scene.gripper
        row, col = to_pixel(g.x, g.y, side)
        marker = GRIPPER_OPEN if g.holding is None else GRIPPER_CLOSED
        image[max(0, row - 2):row + 3, col] = marker
        image[row, max(0, col - 2):col + 3] = marker

    return image


_SHAPE_GLYPHS = {"cube": "c", "ball": "o", "block": "b"}
_RECEPTACLE_GLYPHS = {"box": "X", "basket": "K", "drawer": "D"}


def render_ascii(scene: Scene, side: int = 16) -> str:
    """Text frame: receptacle borders, objects by shape glyph, gripper '@'/'&'."""
    grid: List[List[str]] = [["." for _ in range(side)] for _ in range(side)]

    for rec in scene.receptacles:
        r0, c0 = to_pixel(rec.x0, rec.y1, side)
        r1, c1 = to_pixel(rec.x1, rec.y0, side)
        glyph = _RECEPTACLE_GLYPHS.get(rec.name, "#")
        if rec.name == "drawer" and not rec.drawer_open:
            glyph = glyph.lower()
        for c in range(c0, c1 + 1):
            grid[r0][c] = grid[r1][c] = glyph
        for r in range(r0, r1 + 1):
            grid[r][c0] = grid[r][c1] = glyph
        if rec.name == "drawer":
            hr, hc = to_pixel(*rec.handle_pos, side)
            grid[hr][hc] = "H"

    for obj in scene.objects:
        r, c = to_pixel(obj.x, obj.y, side)
        glyph = _SHAPE_GLYPHS[obj.shape]
        grid[r][c] = glyph.upper() if obj.on is not None else glyph

    if scene.gripper is not None:
        r, c = to_pixel(scene.gripper.x, scene.gripper.y, side)
        grid[r][c] = "@" if scene.gripper.holding is None else "&"

    lines = ["".join(row) for row in grid]
    legend = [f"{i}: {o.color} {o.shape} ({o.x:.2f}, {o.y:.2f})" for i, o in enumerate(scene.objects)]
    if scene.gripper is not None:
        held = scene.gripper.holding
        held_text = "handle" if held == HANDLE_ID else ("-" if held is None else str(held))
        legend.append(f"gripper ({scene.gripper.x:.2f}, {scene.gripper.y:.2f}) holding {held_text}")
    return "\n".join(lines + legend)
