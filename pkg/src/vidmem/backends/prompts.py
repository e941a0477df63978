"""Prompt templates.

Template text lives in ``templates/<id>.system.txt`` and ``<id>.user.txt``.
Only the user part has ``$slot`` placeholders; the system part is sent as-is.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Mapping

from ..errors import ConfigError, InvalidArgument
from .parsing import Schema

_SLOT = re.compile(r"\$([a-z_][a-z0-9_]*)")

NER = "ner"
EPISODIC_TRIPLES = "episodic_triples"
COARSE_CAPTION = "coarse_caption"
CROSS_SCALE_RERANK = "cross_scale_rerank"
SEMANTIC_TRIPLES = "semantic_triples"
SEMANTIC_CONSOLIDATION = "semantic_consolidation"
RETRIEVAL_AGENT = "retrieval_agent"
RESPONSE_AGENT = "response_agent"
FRAME_DESCRIPTION = "frame_description"

SCHEMAS = {
    NER: Schema.ENTITY_LIST,
    EPISODIC_TRIPLES: Schema.TRIPLE_LIST,
    COARSE_CAPTION: Schema.FREE_TEXT,
    CROSS_SCALE_RERANK: Schema.ID_ARRAY,
    SEMANTIC_TRIPLES: Schema.SEMANTIC_TRIPLES,
    SEMANTIC_CONSOLIDATION: Schema.CONSOLIDATION,
    RETRIEVAL_AGENT: Schema.DECISION,
    RESPONSE_AGENT: Schema.ANSWER_LETTER,
    FRAME_DESCRIPTION: Schema.FREE_TEXT,
}


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    system: str
    user: str
    schema: Schema

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(_SLOT.findall(self.user))

    def render(self, inputs: Mapping[str, str]) -> tuple[str, str]:
        missing = self.slots - set(inputs)
        if missing:
            raise InvalidArgument(f"template {self.id!r} has unfilled slots: {sorted(missing)}")
        extra = set(inputs) - self.slots
        if extra:
            raise InvalidArgument(f"template {self.id!r} got unknown inputs: {sorted(extra)}")
        return self.system, Template(self.user).substitute({k: str(v) for k, v in inputs.items()})


def _read(name: str) -> str:
    return resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def get_template(template_id: str) -> PromptTemplate:
    if template_id not in SCHEMAS:
        raise ConfigError(f"unknown prompt template {template_id!r}")
    return PromptTemplate(
        id=template_id,
        system=_read(f"{template_id}.system.txt").rstrip("\n"),
        user=_read(f"{template_id}.user.txt").rstrip("\n"),
        schema=SCHEMAS[template_id],
    )


def all_templates() -> dict[str, PromptTemplate]:
    return {tid: get_template(tid) for tid in SCHEMAS}
