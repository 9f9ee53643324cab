"""
Line-oriented chat over a single image. Every turn is answered from the
image and that turn's question only; no history is carried.
"""

import sys
from pathlib import Path
from typing import Optional, TextIO

import numpy as np

from src.model.chatvla import ChatVLA
from src.utils.logger import setup_logger
from src.worldsim.questions import make_vt_sample
from src.worldsim.render import IMAGE_SIDE, render_ascii
from src.worldsim.scene import Scene
from src.worldsim.tasks import generate_scene
from src.worldsim.vocab import unknown_words

logger = setup_logger()

QUIT = "/quit"
PROMPT = "> "


def load_image(path) -> np.ndarray:
    """A [32, 32, 3] float array in [0, 1] saved with numpy.save."""
    image = np.load(Path(path))
    if image.shape != (IMAGE_SIDE, IMAGE_SIDE, 3):
        raise ValueError(f"image {path} has shape {image.shape}, expected ({IMAGE_SIDE}, {IMAGE_SIDE}, 3)")
    return np.clip(image.astype(np.float64), 0.0, 1.0)


def chat_scene(seed: int, task_id: Optional[str] = None) -> Scene:
    if task_id:
        return generate_scene(task_id, seed)
    return make_vt_sample(np.random.default_rng(seed), seed).scene


def chat_repl(
    model: ChatVLA,
    image: np.ndarray,
    stdin: TextIO = sys.stdin,
    stdout: TextIO = sys.stdout,
    scene: Optional[Scene] = None,
) -> int:
    if scene is not None:
        print(render_ascii(scene), file=stdout)
    print(f"Ask about the scene; {QUIT} to exit.", file=stdout)

    while True:
        stdout.write(PROMPT)
        stdout.flush()
        line = stdin.readline()
        if not line:
            break
        question = line.strip()
        if not question:
            continue
        if question == QUIT:
            break
        unknown = unknown_words(question)
        if unknown:
            print(f"unknown words: {' '.join(unknown)}", file=stdout)
            continue
        try:
            answer = model.answer(image, question.lower())
        except ValueError as e:
            logger.error(f"Chat turn failed: {str(e)}")
            print(f"error: {e}", file=stdout)
            continue
        logger.debug(f"chat: {question!r} -> {answer!r}")
        print(answer, file=stdout)
    return 0
