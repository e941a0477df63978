"""Multi-timescale episodic memory.

Each configured timescale owns a knowledge graph of event triplets plus the
segments (captions) they were extracted from. Fine segments are ingested
directly; coarser segments are summarized bottom-up from the fine captions
they cover and then extracted the same way.

Retrieval seeds PPR at the query's entities on every scale, scores each
segment by the PPR mass of the entities it touches, keeps the top-k per
scale, and lets the reranker pick the final captions across scales.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .backends import PromptLog, Schema, complete, parse_structured
from .backends.prompts import COARSE_CAPTION, CROSS_SCALE_RERANK, EPISODIC_TRIPLES, NER
from .core import Segment, TimeRange, TimescaleConfig, format_range, format_scale, partition_timeline, union_ranges
from .errors import (
    BackendError,
    DegenerateEntity,
    DependencyError,
    IngestError,
    InvalidArgument,
    ParseError,
    VidmemError,
)
from .graph import EPISODIC, KnowledgeGraph, PprParams, Triplet, ppr, rank_key
from .seeding import NODE_MATCH_THRESHOLD, NodeMatcher

log = logging.getLogger(__name__)

MAX_COARSE_WORDS = 500
DEFAULT_K_PER_SCALE = 5
DEFAULT_RERANK_M = 3


@dataclass
class ScaleStore:
    scale_ms: int
    graph: KnowledgeGraph = field(default_factory=lambda: KnowledgeGraph(EPISODIC))
    segments: dict[str, Segment] = field(default_factory=dict)
    _scoring: tuple | None = field(default=None, repr=False, compare=False)

    def ordered_segments(self) -> list[Segment]:
        return sorted(self.segments.values(), key=lambda s: (s.start_ms, s.id))

    def _invalidate(self) -> None:
        self._scoring = None

    def scoring_index(self):
        """Segment -> incident-node CSR over the graph's node order (cached)."""
        if self._scoring is None:
            csr = self.graph.transition_csr(False) if len(self.graph) else None
            index = csr.index if csr is not None else {}
            incident: dict[str, set[int]] = {}
            for t in self.graph.edges:
                ends = (index[t.subject], index[t.object])
                for p in t.provenance:
                    incident.setdefault(p, set()).update(ends)
            segs = self.ordered_segments()
            indptr = np.zeros(len(segs) + 1, dtype=np.int64)
            cols: list[int] = []
            for i, s in enumerate(segs):
                nodes = sorted(incident.get(s.id, ()))
                cols.extend(nodes)
                indptr[i + 1] = len(cols)
            self._scoring = (segs, indptr, np.asarray(cols, dtype=np.int64))
        return self._scoring


class EpisodicMemory:
    def __init__(self, config: TimescaleConfig | None = None):
        self.config = config or TimescaleConfig()
        self.per_scale: dict[int, ScaleStore] = {s: ScaleStore(s) for s in self.config.scales_ms}

    def __eq__(self, other) -> bool:
        if not isinstance(other, EpisodicMemory):
            return NotImplemented
        return self.config == other.config and all(
            self.per_scale[s].graph == other.per_scale[s].graph
            and self.per_scale[s].segments == other.per_scale[s].segments
            for s in self.config.scales_ms
        )

    def __repr__(self) -> str:
        parts = ", ".join(
            f"{format_scale(s)}: {len(st.segments)} seg/{len(st.graph)} edges" for s, st in self.per_scale.items()
        )
        return f"EpisodicMemory({parts})"

    def store(self, scale_ms: int) -> ScaleStore:
        try:
            return self.per_scale[scale_ms]
        except KeyError:
            raise InvalidArgument(f"scale {scale_ms} ms is not configured ({self.config.scales_ms})") from None

    def is_empty(self) -> bool:
        return all(not st.segments for st in self.per_scale.values())

    def total_ms(self) -> int:
        fine = self.per_scale[self.config.fine_ms].segments.values()
        return max((s.end_ms for s in fine), default=0)

    def validate(self) -> None:
        if set(self.per_scale) != set(self.config.scales_ms):
            raise InvalidArgument("per-scale stores do not match the configured scales")
        for scale, st in self.per_scale.items():
            for seg in st.segments.values():
                if seg.scale_ms != scale:
                    raise InvalidArgument(f"segment {seg.id!r} at scale {seg.scale_ms} stored under {scale}")
            missing = st.graph.segments() - set(st.segments)
            if missing:
                raise InvalidArgument(f"scale {format_scale(scale)}: provenance without segments {sorted(missing)[:5]}")


@dataclass(frozen=True)
class ScaleCandidate:
    segment: Segment
    scale_ms: int
    relevance: float

    def __post_init__(self):
        if self.segment.scale_ms != self.scale_ms:
            raise InvalidArgument(f"segment {self.segment.id!r} does not belong to scale {self.scale_ms}")
        if self.relevance < 0:
            raise InvalidArgument("relevance must be non-negative")


@dataclass
class EpisodicResult:
    by_scale: dict[int, list[ScaleCandidate]]
    warnings: list[str] = field(default_factory=list)

    def flatten(self) -> list[ScaleCandidate]:
        return [c for scale in sorted(self.by_scale) for c in self.by_scale[scale]]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def segment_passage(seg: Segment) -> str:
    if seg.transcript:
        return f"{seg.caption}\nTranscript: {seg.transcript}"
    return seg.caption


def extract_triplets(
    passage: str, backend, *, provenance: Iterable[str] = (), journal: PromptLog | None = None
) -> list[Triplet]:
    """NER then triplet extraction over one passage."""
    raw = complete(backend, NER, {"passage": passage}, journal=journal)
    entities = parse_structured(raw, Schema.ENTITY_LIST)
    ner_json = json.dumps({"named_entities": list(entities)}, ensure_ascii=False)
    raw = complete(backend, EPISODIC_TRIPLES, {"passage": passage, "named_entities": ner_json}, journal=journal)
    triples = parse_structured(raw, Schema.TRIPLE_LIST)
    prov = frozenset(provenance)
    out = []
    for s, p, o in triples:
        try:
            out.append(Triplet.build(s, p, o, prov, EPISODIC))
        except DegenerateEntity as exc:
            log.warning("skipping degenerate triplet %r: %s", (s, p, o), exc)
    return out


def _store_segment(
    mem: EpisodicMemory, store: ScaleStore, seg: Segment, backend, journal: PromptLog | None
) -> EpisodicMemory:
    if seg.id in store.segments:
        raise InvalidArgument(f"segment {seg.id!r} already ingested at scale {format_scale(store.scale_ms)}")
    try:
        triplets = extract_triplets(segment_passage(seg), backend, provenance=(seg.id,), journal=journal)
    except ParseError as exc:
        raise ParseError(f"segment {seg.id}: {exc}", exc.raw) from exc
    except BackendError as exc:
        raise IngestError(f"backend failed on segment {seg.id}: {exc}", seg.id) from exc
    # Commit only after every backend call succeeded.
    store.segments[seg.id] = seg
    store.graph.segment_starts[seg.id] = seg.start_ms
    for t in triplets:
        store.graph.add(t)
    store._invalidate()
    return mem


def ingest_fine_segment(mem: EpisodicMemory, seg: Segment, backend, *, journal: PromptLog | None = None) -> EpisodicMemory:
    if seg.scale_ms != mem.config.fine_ms:
        raise InvalidArgument(f"segment {seg.id!r} has scale {seg.scale_ms}, fine scale is {mem.config.fine_ms}")
    if not seg.caption or not seg.caption.strip():
        raise InvalidArgument(f"segment {seg.id!r} has an empty caption")
    return _store_segment(mem, mem.store(seg.scale_ms), seg, backend, journal)


def coverage_gaps(covered: Sequence[TimeRange], target: TimeRange) -> list[tuple[int, int]]:
    gaps = []
    cursor = target.start_ms
    for r in union_ranges(covered):
        if r.end_ms <= cursor:
            continue
        if r.start_ms >= target.end_ms:
            break
        if r.start_ms > cursor:
            gaps.append((cursor, r.start_ms))
        cursor = max(cursor, r.end_ms)
    if cursor < target.end_ms:
        gaps.append((cursor, target.end_ms))
    return gaps


def truncate_words(text: str, limit: int = MAX_COARSE_WORDS) -> str:
    words = text.split()
    if len(words) <= limit:
        return text
    log.warning("coarse caption has %d words; truncating to %d", len(words), limit)
    return " ".join(words[:limit])


def coarse_segment_id(scale_ms: int, start_ms: int) -> str:
    return f"{format_scale(scale_ms)}@{start_ms}"


def ingest_coarse_segment(
    mem: EpisodicMemory, scale_ms: int, range_: TimeRange, backend, *, journal: PromptLog | None = None
) -> EpisodicMemory:
    """Summarize the fine captions under ``range_`` and extract the summary."""
    range_ = TimeRange.coerce(range_)
    if scale_ms not in mem.per_scale or scale_ms <= mem.config.fine_ms:
        raise InvalidArgument(f"{scale_ms} ms is not a configured coarse scale")
    if range_.duration_ms > scale_ms:
        raise InvalidArgument(f"range {range_} is longer than the {format_scale(scale_ms)} scale")
    fine = [s for s in mem.store(mem.config.fine_ms).ordered_segments() if s.range.overlaps(range_)]
    gaps = coverage_gaps([s.range for s in fine], range_)
    if gaps:
        pretty = ", ".join(format_range(TimeRange(a, b)) for a, b in gaps)
        raise DependencyError(f"fine captions missing under {range_}: {pretty}", gaps)
    lines = "\n".join(f"[{format_range(s.range)}] {s.caption}" for s in fine)
    seg_id = coarse_segment_id(scale_ms, range_.start_ms)
    try:
        raw = complete(backend, COARSE_CAPTION, {"range": format_range(range_), "captions": lines}, journal=journal)
    except BackendError as exc:
        raise IngestError(f"backend failed summarizing {seg_id}: {exc}", seg_id) from exc
    summary = truncate_words(parse_structured(raw, Schema.FREE_TEXT))
    if not summary:
        raise ParseError(f"empty summary for {seg_id}", raw)
    seg = Segment(seg_id, range_, scale_ms, summary)
    return _store_segment(mem, mem.store(scale_ms), seg, backend, journal)


def build_episodic(
    segments: Iterable[Segment],
    backend,
    config: TimescaleConfig | None = None,
    *,
    journal: PromptLog | None = None,
    on_error: Callable[[str, Exception], None] | None = None,
) -> EpisodicMemory:
    """Ingest fine segments, then build every coarser scale bottom-up.

    Per-segment failures are reported through ``on_error`` (and logged) and
    the build carries on; coarse windows that lose coverage are skipped.
    """
    mem = EpisodicMemory(config)

    def fail(where: str, exc: Exception) -> None:
        log.warning("episodic build: %s: %s", where, exc)
        if on_error is None:
            raise exc
        on_error(where, exc)

    for seg in sorted(segments, key=lambda s: (s.start_ms, s.id)):
        try:
            ingest_fine_segment(mem, seg, backend, journal=journal)
        except VidmemError as exc:
            fail(seg.id, exc)
    total = mem.total_ms()
    if total == 0:
        return mem
    for scale in mem.config.scales_ms[1:]:
        for rng in partition_timeline(total, scale):
            try:
                ingest_coarse_segment(mem, scale, rng, backend, journal=journal)
            except VidmemError as exc:
                fail(coarse_segment_id(scale, rng.start_ms), exc)
    return mem


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


def score_segments(store: ScaleStore, node_vector: np.ndarray) -> list[tuple[Segment, float]]:
    segs, indptr, cols = store.scoring_index()
    if not segs:
        return []
    mass = kernels.segment_mass(indptr, cols, node_vector)
    return [(s, float(m)) for s, m in zip(segs, mass)]


def episodic_retrieve(
    mem: EpisodicMemory,
    query: str,
    k_per_scale: int,
    backend,
    *,
    matcher: NodeMatcher | None = None,
    params: PprParams = PprParams(),
    node_match_threshold: float = NODE_MATCH_THRESHOLD,
) -> EpisodicResult:
    if k_per_scale <= 0:
        raise InvalidArgument(f"k_per_scale must be positive, got {k_per_scale}")
    result = EpisodicResult({s: [] for s in mem.config.scales_ms})
    if mem.is_empty():
        result.warnings.append("empty-memory")
        return result
    matcher = matcher or NodeMatcher(backend, node_match_threshold)
    entities = matcher.query_entities(query)
    for scale, store in mem.per_scale.items():
        if not len(store.graph):
            continue
        seeds = matcher.seeds(store.graph, entities)
        if not seeds:
            result.warnings.append(f"no-seed:{format_scale(scale)}")
            continue
        pr = ppr(store.graph, seeds, params)
        if not pr.converged:
            result.warnings.append(f"ppr-not-converged:{format_scale(scale)}")
        scored = [(s, v) for s, v in score_segments(store, pr.vector) if v > 0]
        scored.sort(key=lambda sv: (rank_key(sv[1]), sv[0].start_ms, sv[0].id))
        result.by_scale[scale] = [ScaleCandidate(s, scale, v) for s, v in scored[:k_per_scale]]
    return result


def render_candidates(candidates: Sequence[ScaleCandidate]) -> str:
    blocks = []
    for i, c in enumerate(candidates):
        r = c.segment.range
        blocks.append(
            f"[ID {i}] scale={format_scale(c.scale_ms)} time={format_range(r)}\n{c.segment.caption}"
        )
    return "\n\n".join(blocks)


def global_order(candidates: Sequence[ScaleCandidate]) -> list[ScaleCandidate]:
    return sorted(candidates, key=lambda c: (rank_key(c.relevance), c.scale_ms, c.segment.start_ms, c.segment.id))


def cross_scale_rerank(
    query: str,
    candidates: Sequence[ScaleCandidate],
    m: int,
    backend,
    *,
    journal: PromptLog | None = None,
) -> list[Segment]:
    """Let the backend pick and order up to ``m`` captions from all scales."""
    if m <= 0:
        raise InvalidArgument(f"m must be positive, got {m}")
    candidates = list(candidates)
    if len(candidates) <= 1:
        return [c.segment for c in candidates]
    try:
        raw = complete(
            backend, CROSS_SCALE_RERANK, {"query": query, "candidates": render_candidates(candidates)}, journal=journal
        )
        ids = parse_structured(raw, Schema.ID_ARRAY)
    except ParseError as exc:
        log.warning("reranker output unusable (%s); falling back to score order", exc)
        ids = []
    chosen: list[ScaleCandidate] = []
    seen: set[int] = set()
    for raw_id in ids:
        try:
            i = int(str(raw_id).strip())
        except ValueError:
            i = -1
        if not 0 <= i < len(candidates):
            log.warning("reranker returned unknown caption id %r", raw_id)
            continue
        if i in seen:
            continue
        seen.add(i)
        chosen.append(candidates[i])
    if not chosen:
        chosen = global_order(candidates)
    return [c.segment for c in chosen[:m]]
