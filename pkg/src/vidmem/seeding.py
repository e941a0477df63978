"""Query -> seed nodes, shared by episodic and semantic retrieval.

Query entities come from the NER prompt (falling back to the whole query when
NER yields nothing usable). Each entity seeds the node with the same
normalized text; otherwise the most similar node by embedding, if its cosine
clears the match threshold. Seed mass is uniform over matched nodes.
"""

from __future__ import annotations

import logging
import threading

import numpy as np

from .backends import PromptLog, Schema, complete, embed, parse_structured
from .backends.prompts import NER
from .errors import DegenerateEntity, ParseError
from .graph import KnowledgeGraph, normalize_entity

log = logging.getLogger(__name__)

NODE_MATCH_THRESHOLD = 0.8


class NodeMatcher:
    def __init__(self, backend, threshold: float = NODE_MATCH_THRESHOLD, journal: PromptLog | None = None):
        self.backend = backend
        self.threshold = threshold
        self.journal = journal
        self._vectors: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def vector(self, text: str) -> np.ndarray:
        with self._lock:
            v = self._vectors.get(text)
        if v is None:
            v = embed(self.backend, text)
            with self._lock:
                self._vectors[text] = v
        return v

    def query_entities(self, query: str) -> list[str]:
        raw = complete(self.backend, NER, {"passage": query}, journal=self.journal)
        try:
            surfaces = parse_structured(raw, Schema.ENTITY_LIST)
        except ParseError as exc:
            log.warning("query NER output unusable (%s); using the whole query", exc)
            surfaces = []
        out: list[str] = []
        for s in surfaces:
            try:
                n = normalize_entity(s)
            except DegenerateEntity:
                continue
            if n not in out:
                out.append(n)
        if not out:
            try:
                out = [normalize_entity(query)]
            except DegenerateEntity:
                out = []
        return out

    def match(self, graph: KnowledgeGraph, entity: str) -> str | None:
        if graph.has_node(entity):
            return entity
        nodes = graph.nodes
        if not nodes:
            return None
        q = self.vector(entity)
        mat = np.stack([self.vector(n) for n in nodes])
        sims = mat @ q
        best = int(np.argmax(sims))
        if sims[best] >= self.threshold:
            return nodes[best]
        return None

    def seeds(self, graph: KnowledgeGraph, entities: list[str]) -> dict[str, float]:
        matched: list[str] = []
        for e in entities:
            node = self.match(graph, e)
            if node is not None and node not in matched:
                matched.append(node)
        if not matched:
            return {}
        w = 1.0 / len(matched)
        return {n: w for n in matched}
