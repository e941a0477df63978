"""Retrieval actions emitted by the decision agent."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .errors import InvalidArgument

EPISODIC = "episodic"
SEMANTIC = "semantic"
VISUAL = "visual"
MEMORY_KINDS = (EPISODIC, SEMANTIC, VISUAL)
MASK_LETTERS = {"E": EPISODIC, "S": SEMANTIC, "V": VISUAL}


@dataclass(frozen=True)
class Search:
    memory: str
    query: str

    def __post_init__(self):
        if self.memory not in MEMORY_KINDS:
            raise InvalidArgument(f"unknown memory kind {self.memory!r}")
        if not self.query or not self.query.strip():
            raise InvalidArgument("search query must be non-empty")


@dataclass(frozen=True)
class Stop:
    degraded: bool = False


RetrievalAction = Union[Search, Stop]


def parse_mask(mask: str) -> frozenset[str]:
    """``"E+S+V"`` -> {"episodic", "semantic", "visual"}."""
    kinds = set()
    for part in mask.replace(" ", "").upper().split("+"):
        if part not in MASK_LETTERS:
            raise InvalidArgument(f"bad memory mask component {part!r} in {mask!r}")
        kinds.add(MASK_LETTERS[part])
    return frozenset(kinds)


def format_mask(kinds) -> str:
    order = [("E", EPISODIC), ("S", SEMANTIC), ("V", VISUAL)]
    return "+".join(letter for letter, kind in order if kind in kinds)
