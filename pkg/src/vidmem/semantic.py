"""Semantic memory: one evolving graph of long-term facts.

Each semantic window contributes a batch of generalized triplets. A batch is
merged by matching each incoming triplet against existing edges by embedding
similarity and letting the judge decide, per incoming triplet, what replaces
its matches. Every merge is journaled, so the graph is always the replay of
its journal from empty.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backends import PromptLog, Schema, complete, embed, parse_structured
from .backends.prompts import SEMANTIC_CONSOLIDATION, SEMANTIC_TRIPLES
from .core import TimeRange, format_range, partition_timeline
from .errors import (
    DegenerateEntity,
    InternalConsistencyError,
    InvalidArgument,
    ParseError,
    SchemaViolation,
    VidmemError,
)
from .graph import SEMANTIC, KnowledgeGraph, PprParams, Triplet, edge_scores, ppr
from .seeding import NODE_MATCH_THRESHOLD, NodeMatcher

log = logging.getLogger(__name__)

MATCH_THRESHOLD = 0.6
DEFAULT_SEMANTIC_K = 10


@dataclass(frozen=True)
class MatchPair:
    existing: Triplet
    incoming: Triplet
    similarity: float

    def to_record(self) -> dict:
        return {"existing": self.existing.to_record(), "incoming": self.incoming.to_record(), "similarity": self.similarity}

    @classmethod
    def from_record(cls, rec: dict) -> MatchPair:
        return cls(Triplet.from_record(rec["existing"]), Triplet.from_record(rec["incoming"]), float(rec["similarity"]))


@dataclass(frozen=True)
class ConsolidationRecord:
    generation: int
    incoming: tuple[Triplet, ...]
    removed: tuple[Triplet, ...]
    updated: tuple[Triplet, ...]
    match_pairs: tuple[MatchPair, ...] = ()
    evidence: tuple[tuple[int, ...], ...] | None = None
    window: TimeRange | None = None
    segment_starts: tuple[tuple[str, int], ...] = ()

    def to_record(self) -> dict:
        rec = {
            "generation": self.generation,
            "incoming": [t.to_record() for t in self.incoming],
            "removed": [t.to_record() for t in self.removed],
            "updated": [t.to_record() for t in self.updated],
            "match_pairs": [p.to_record() for p in self.match_pairs],
            "segment_starts": [list(x) for x in self.segment_starts],
        }
        if self.evidence is not None:
            rec["evidence"] = [list(e) for e in self.evidence]
        if self.window is not None:
            rec["window"] = self.window.to_list()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> ConsolidationRecord:
        ev = rec.get("evidence")
        win = rec.get("window")
        return cls(
            generation=int(rec["generation"]),
            incoming=tuple(Triplet.from_record(t) for t in rec["incoming"]),
            removed=tuple(Triplet.from_record(t) for t in rec["removed"]),
            updated=tuple(Triplet.from_record(t) for t in rec["updated"]),
            match_pairs=tuple(MatchPair.from_record(p) for p in rec.get("match_pairs", ())),
            evidence=None if ev is None else tuple(tuple(int(i) for i in e) for e in ev),
            window=None if win is None else TimeRange(*win),
            segment_starts=tuple((str(a), int(b)) for a, b in rec.get("segment_starts", ())),
        )


class SemanticMemory:
    def __init__(self):
        self.graph = KnowledgeGraph(SEMANTIC)
        self.generation = 0
        self.journal: list[ConsolidationRecord] = []
        self._vectors: dict[str, np.ndarray] = {}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticMemory):
            return NotImplemented
        return self.generation == other.generation and self.graph == other.graph and self.journal == other.journal

    def __repr__(self) -> str:
        return f"SemanticMemory(generation={self.generation}, edges={len(self.graph)})"

    def copy(self) -> SemanticMemory:
        out = SemanticMemory()
        out.graph = self.graph.copy()
        out.generation = self.generation
        out.journal = list(self.journal)
        out._vectors = self._vectors
        return out

    def apply(self, record: ConsolidationRecord) -> None:
        """Apply one journal record in place, checking the set identity."""
        if record.generation != self.generation + 1:
            raise InternalConsistencyError(
                f"journal record for generation {record.generation} applied at generation {self.generation}"
            )
        prev = self.graph.edge_keys()
        removed = {t.key for t in record.removed}
        if not removed <= prev:
            raise InternalConsistencyError(f"removal of absent edges {sorted(removed - prev)[:3]}")
        for key in sorted(removed):
            self.graph.remove(key)
        for sid, start in record.segment_starts:
            self.graph.segment_starts[sid] = start
        for t in record.updated:
            self.graph.add(t)
        expected = (prev - removed) | {t.key for t in record.updated}
        if self.graph.edge_keys() != expected:
            raise InternalConsistencyError(f"generation {record.generation} violates the update identity")
        self.generation = record.generation
        self.journal.append(record)

    @classmethod
    def replay(cls, journal: Sequence[ConsolidationRecord]) -> SemanticMemory:
        mem = cls()
        for rec in journal:
            mem.apply(rec)
        return mem

    def validate(self) -> None:
        replayed = SemanticMemory.replay(self.journal)
        if replayed.graph != self.graph or replayed.generation != self.generation:
            raise InternalConsistencyError("semantic graph differs from its journal replay")

    def vector(self, backend, text: str) -> np.ndarray:
        v = self._vectors.get(text)
        if v is None:
            v = embed(backend, text)
            self._vectors[text] = v
        return v


@dataclass
class SemanticResult:
    triplets: list[tuple[Triplet, float]]
    warnings: list[str] = field(default_factory=list)


def _numbered_triples(triplets: Sequence[Triplet]) -> str:
    return "\n".join(
        f"{i}. {json.dumps([t.subject, t.predicate, t.object], ensure_ascii=False)}" for i, t in enumerate(triplets)
    )


def extract_semantic(
    triplets: Sequence[Triplet],
    backend,
    *,
    window: TimeRange | None = None,
    journal: PromptLog | None = None,
) -> tuple[list[Triplet], list[list[int]]]:
    """Generalize one window's episodic triplets into semantic ones.

    Each output triplet inherits the provenance of its evidence triplets.
    """
    if not triplets:
        raise InvalidArgument("semantic extraction needs at least one episodic triplet")
    inputs = {
        "window": format_range(window) if window is not None else "unspecified",
        "episodic_triples": _numbered_triples(triplets),
    }
    raw = complete(backend, SEMANTIC_TRIPLES, inputs, journal=journal)
    extraction = parse_structured(raw, Schema.SEMANTIC_TRIPLES)
    out: list[Triplet] = []
    evidence: list[list[int]] = []
    for (s, p, o), ev in zip(extraction.triples, extraction.evidence):
        if not ev:
            raise SchemaViolation(f"semantic triple {[s, p, o]} has no supporting evidence", raw)
        bad = [i for i in ev if not 0 <= i < len(triplets)]
        if bad:
            raise SchemaViolation(f"evidence indices {bad} outside 0..{len(triplets) - 1}", raw)
        prov = frozenset().union(*(triplets[i].provenance for i in ev))
        try:
            out.append(Triplet.build(s, p, o, prov, SEMANTIC))
        except DegenerateEntity as exc:
            log.warning("skipping degenerate semantic triplet %r: %s", (s, p, o), exc)
            continue
        evidence.append(list(ev))
    return out, evidence


def match_candidates(
    mem: SemanticMemory, incoming: Sequence[Triplet], threshold: float, backend
) -> list[MatchPair]:
    """Pairs of (existing, incoming) whose triplet texts have cosine >= threshold."""
    if not 0 < threshold <= 1:
        raise InvalidArgument(f"threshold must lie in (0, 1], got {threshold}")
    existing = mem.graph.edges
    if not existing or not incoming:
        return []
    ex = np.stack([mem.vector(backend, t.text) for t in existing])
    pairs = []
    for t in incoming:
        sims = np.clip(ex @ mem.vector(backend, t.text), -1.0, 1.0)
        for e, sim in zip(existing, sims):
            sim = 1.0 if e.text == t.text else float(sim)
            if sim >= threshold:
                pairs.append(MatchPair(e, t, sim))
    return pairs


def _judge(
    backend, incoming: Triplet, matched: Sequence[Triplet], journal: PromptLog | None
) -> tuple[Triplet | None, list[Triplet]]:
    """Ask the judge about one incoming triplet; returns (updated, removed)."""
    inputs = {
        "new_triple": json.dumps([incoming.subject, incoming.predicate, incoming.object], ensure_ascii=False),
        "existing_triples": _numbered_triples(matched),
    }
    raw = complete(backend, SEMANTIC_CONSOLIDATION, inputs, journal=journal)
    try:
        decision = parse_structured(raw, Schema.CONSOLIDATION)
    except ParseError as exc:
        log.warning("judge output unusable for %s (%s); adding it unmodified", incoming, exc)
        return incoming, []
    removed = []
    for i in decision.remove:
        if 0 <= i < len(matched):
            if matched[i] not in removed:
                removed.append(matched[i])
        else:
            log.warning("judge asked to remove index %d outside the %d matches of %s; ignored", i, len(matched), incoming)
    if decision.updated is None:
        return None, removed
    prov = incoming.provenance.union(*(t.provenance for t in removed))
    try:
        updated = Triplet.build(*decision.updated, prov, SEMANTIC)
    except DegenerateEntity as exc:
        log.warning("judge produced a degenerate triplet (%s); adding %s unmodified", exc, incoming)
        return incoming, removed
    return updated, removed


def consolidate(
    mem: SemanticMemory,
    incoming: Sequence[Triplet],
    backend,
    *,
    threshold: float = MATCH_THRESHOLD,
    judge_backend=None,
    window: TimeRange | None = None,
    evidence: Sequence[Sequence[int]] | None = None,
    segment_starts: dict[str, int] | None = None,
    journal: PromptLog | None = None,
) -> SemanticMemory:
    """Merge ``incoming`` into a new generation; ``mem`` is left untouched.

    ``backend`` provides embeddings; ``judge_backend`` (default: the same)
    answers the consolidation prompt.
    """
    judge_backend = judge_backend or backend
    incoming = list(incoming)
    pairs = match_candidates(mem, incoming, threshold, backend)
    by_incoming: dict[int, list[Triplet]] = {}
    for p in pairs:
        by_incoming.setdefault(id(p.incoming), []).append(p.existing)
    removed: dict[tuple, Triplet] = {}
    updated: dict[tuple, Triplet] = {}
    for t in incoming:
        matched = by_incoming.get(id(t), [])
        if matched:
            new, gone = _judge(judge_backend, t, matched, journal)
        else:
            new, gone = t, []
        for g in gone:
            removed[g.key] = g
        if new is not None:
            prior = updated.get(new.key)
            updated[new.key] = new if prior is None else prior.with_provenance(prior.provenance | new.provenance)
    record = ConsolidationRecord(
        generation=mem.generation + 1,
        incoming=tuple(incoming),
        removed=tuple(removed[k] for k in sorted(removed)),
        updated=tuple(updated[k] for k in sorted(updated)),
        match_pairs=tuple(pairs),
        evidence=None if evidence is None else tuple(tuple(e) for e in evidence),
        window=window,
        segment_starts=tuple(sorted((segment_starts or {}).items())),
    )
    nxt = mem.copy()
    nxt.apply(record)
    return nxt


def semantic_retrieve(
    mem: SemanticMemory,
    query: str,
    k: int,
    backend,
    *,
    matcher: NodeMatcher | None = None,
    params: PprParams = PprParams(),
    node_match_threshold: float = NODE_MATCH_THRESHOLD,
) -> SemanticResult:
    """Top-``k`` edges by endpoint PPR sum; zero-score edges are dropped."""
    if k <= 0:
        raise InvalidArgument(f"k must be positive, got {k}")
    if not len(mem.graph):
        return SemanticResult([], ["empty-memory"])
    matcher = matcher or NodeMatcher(backend, node_match_threshold)
    seeds = matcher.seeds(mem.graph, matcher.query_entities(query))
    if not seeds:
        return SemanticResult([], ["no-seed"])
    pr = ppr(mem.graph, seeds, params)
    warnings = [] if pr.converged else ["ppr-not-converged"]
    ranked = [(t, s) for t, s in edge_scores(mem.graph, pr) if s > 0]
    return SemanticResult(ranked[:k], warnings)


def window_triplets(episodic, window: TimeRange, semantic_scale_ms: int) -> tuple[list[Triplet], dict[str, int]]:
    """Episodic triplets evidencing one semantic window, in time order.

    Uses the graph at the semantic scale when it is one of the episodic
    scales, otherwise the fine graph restricted to segments in the window.
    """
    scale = semantic_scale_ms if semantic_scale_ms in episodic.per_scale else episodic.config.fine_ms
    store = episodic.per_scale[scale]
    segs = {s.id: s for s in store.ordered_segments() if window.contains_ms(s.start_ms)}
    if not segs:
        return [], {}
    picked = []
    for t in store.graph.edges:
        prov = t.provenance & segs.keys()
        if prov:
            first = min(segs[p].start_ms for p in prov)
            picked.append((first, t.key, t.with_provenance(prov)))
    picked.sort(key=lambda x: (x[0], x[1]))
    return [t for _, _, t in picked], {sid: s.start_ms for sid, s in segs.items()}


def build_semantic(
    episodic,
    backend,
    *,
    semantic_scale_ms: int | None = None,
    threshold: float = MATCH_THRESHOLD,
    journal: PromptLog | None = None,
    on_error: Callable[[str, Exception], None] | None = None,
) -> SemanticMemory:
    """Walk the timeline window by window, extracting and consolidating."""
    t_s = semantic_scale_ms or episodic.config.semantic_scale_ms
    mem = SemanticMemory()
    total = episodic.total_ms()
    if total == 0:
        return mem
    for window in partition_timeline(total, t_s):
        source, starts = window_triplets(episodic, window, t_s)
        if not source:
            continue
        try:
            triplets, evidence = extract_semantic(source, backend, window=window, journal=journal)
            if not triplets:
                continue
            mem = consolidate(
                mem,
                triplets,
                backend,
                threshold=threshold,
                window=window,
                evidence=evidence,
                segment_starts=starts,
                journal=journal,
            )
        except VidmemError as exc:
            log.warning("semantic window %s failed: %s", format_range(window), exc)
            if on_error is None:
                raise
            on_error(format_range(window), exc)
    return mem
