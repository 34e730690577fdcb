"""
verbose-samples — Word-level vocabulary

Fixed token list: specials, caption grammar, shape-world colors and
shapes, CHAIR synonyms and distractor objects, then prompt words. A
vocabulary of size V takes the first V entries, so reduced victims keep
the specials and the caption grammar.
"""

from __future__ import annotations

from dataclasses import dataclass

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"

COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan")
SHAPES = ("circle", "square", "triangle", "cross")

# CHAIR synonym table: surface word → canonical shape
SHAPE_SYNONYMS: dict[str, str] = {
    "circle": "circle", "disc": "circle", "ring": "circle",
    "square": "square", "box": "square", "block": "square",
    "triangle": "triangle", "wedge": "triangle",
    "cross": "cross", "plus": "cross",
}
# Objects that never occur in shape-world; any mention is a hallucination.
DISTRACTOR_COLORS = ("purple", "orange", "white", "black", "pink", "brown", "gray")
DISTRACTOR_SHAPES = ("star", "hexagon", "oval", "diamond")

_PROMPT_WORDS = (
    "what", "is", "in", "the", "image", "video", "describe", "how", "many",
    "objects", "are", "there", "which", "color", "shape", "of", "with",
    "on", "left", "right", "top", "bottom", "moving", "one", "two", "three",
    "small", "large", "picture", "scene", "shown", "do",
)

QUESTION_TEMPLATES: dict[str, tuple[str, ...]] = {
    "image": ("what is in the image", "describe the image", "what objects are in the picture"),
    "video": ("what is in the video", "describe the video", "what objects are moving"),
}

CANONICAL_TOKENS: tuple[str, ...] = (
    (PAD, BOS, EOS, "a", "and")
    + COLORS
    + SHAPES
    + tuple(w for w in SHAPE_SYNONYMS if w not in SHAPES)
    + DISTRACTOR_COLORS
    + DISTRACTOR_SHAPES
    + _PROMPT_WORDS
)


@dataclass(frozen=True)
class VocabSpec:
    """Token strings with distinct special ids below V."""

    tokens: tuple[str, ...]
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self) -> None:
        specials = {self.pad_id, self.bos_id, self.eos_id}
        if len(specials) != 3 or max(specials) >= len(self.tokens):
            raise VerboseSamplesError(
                FailCode.FAIL_CONFIG_INVALID, "special ids must be distinct and < V",
            )
        if len(set(self.tokens)) != len(self.tokens):
            raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "duplicate tokens in vocabulary")

    @classmethod
    def default(cls, size: int = 64) -> "VocabSpec":
        if not 4 <= size <= len(CANONICAL_TOKENS):
            raise VerboseSamplesError(
                FailCode.FAIL_CONFIG_INVALID,
                f"vocabulary size must lie in [4, {len(CANONICAL_TOKENS)}]", size=size,
            )
        return cls(tokens=CANONICAL_TOKENS[:size])

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    def encode(self, text: str) -> list[int]:
        idx = self.index
        ids = []
        for word in text.lower().replace("?", " ").split():
            if word not in idx:
                raise VerboseSamplesError(
                    FailCode.FAIL_INVALID_TOKEN, f"word not in vocabulary: {word!r}", word=word,
                )
            ids.append(idx[word])
        return ids

    def decode(self, ids: list[int] | tuple[int, ...]) -> str:
        words = []
        for i in ids:
            if i == self.eos_id:
                break
            if i in (self.pad_id, self.bos_id):
                continue
            words.append(self.tokens[i])
        return " ".join(words)

    def check_ids(self, ids: list[int] | tuple[int, ...]) -> None:
        for i in ids:
            if not 0 <= int(i) < self.size:
                raise VerboseSamplesError(
                    FailCode.FAIL_INVALID_TOKEN, f"token id {i} outside vocabulary of size {self.size}",
                    token=int(i),
                )
