"""
Closed 64-token vocabulary shared by instructions, reasoning, questions and
answers. Text is lower-case and whitespace separated; the two system prompts
map to single tokens.
"""

import hashlib
from typing import Dict, List, Sequence

from src.model.config import SYSTEM_PROMPT_CONTROL, SYSTEM_PROMPT_UNDERSTANDING


class VocabularyError(ValueError):
    """Raised when text contains words outside the closed vocabulary"""

    def __init__(self, unknown: Sequence[str]):
        self.unknown = list(unknown)
        super().__init__(f"Unknown words: {', '.join(self.unknown)}")


PAD = "<pad>"
EOS = "<eos>"
PROMPT_UNDERSTANDING = "<answer>"
PROMPT_CONTROL = "<act>"

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("cube", "ball", "block")
RECEPTACLES = ("box", "basket", "drawer")
SKILLS = ("pick-place", "push", "stack", "open-close", "sort")
ROWS = ("top", "middle", "bottom")
COLUMNS = ("left", "center", "right")
NUMBERS = ("zero", "one", "two", "three", "four")

_WORDS = (
    (PAD, EOS, PROMPT_UNDERSTANDING, PROMPT_CONTROL)
    + COLORS
    + SHAPES
    + RECEPTACLES
    + SKILLS
    + ROWS
    + COLUMNS
    + NUMBERS
    + (
        "the", "is", "at", "target", "i", "will", "it", ".",
        "in", "on", "to", "put", "move", "open", "close", "and", "toys",
        "what", "color", "how", "many", "where", "there", "a", "objects",
        "yes", "no",
    )
)

VOCAB_SIZE = 64
VOCAB: List[str] = list(_WORDS) + [f"<unused{i}>" for i in range(VOCAB_SIZE - len(_WORDS))]
TOKEN_TO_ID: Dict[str, int] = {tok: i for i, tok in enumerate(VOCAB)}

PAD_ID = TOKEN_TO_ID[PAD]
EOS_ID = TOKEN_TO_ID[EOS]

SYSTEM_PROMPTS = {
    SYSTEM_PROMPT_UNDERSTANDING: PROMPT_UNDERSTANDING,
    SYSTEM_PROMPT_CONTROL: PROMPT_CONTROL,
}


def vocab_hash() -> str:
    return hashlib.sha256("\n".join(VOCAB).encode("utf-8")).hexdigest()[:16]


def unknown_words(text: str) -> List[str]:
    return [w for w in text.lower().split() if w not in TOKEN_TO_ID]


def tokenize(text: str) -> List[int]:
    """Map whitespace-separated words to ids; rejects unknown words."""
    if text in SYSTEM_PROMPTS:
        return [TOKEN_TO_ID[SYSTEM_PROMPTS[text]]]
    missing = unknown_words(text)
    if missing:
        raise VocabularyError(missing)
    return [TOKEN_TO_ID[w] for w in text.lower().split()]


def detokenize(ids: Sequence[int]) -> str:
    words = []
    for i in ids:
        if i == EOS_ID:
            break
        if i != PAD_ID:
            words.append(VOCAB[int(i)])
    return " ".join(words)


def prompt_id(prompt: str) -> int:
    return tokenize(prompt)[0]
