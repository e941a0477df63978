"""The iterative retrieval loop and final answer generation.

Each round the decision backend either stops or names one memory and a
query. The engine dispatches to that memory's retriever, renders what came
back into the round history, and asks again, up to ``max_iters`` rounds.
Traces are plain data: every statistic the evaluator reports is computed
from them.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

from . import episodic as ep
from . import semantic as sm
from . import visual as vm
from ._jsonio import digest
from .actions import EPISODIC, MEMORY_KINDS, SEMANTIC, VISUAL, RetrievalAction, Search, Stop, format_mask
from .backends import PromptLog, Schema, complete, embed, parse_structured
from .backends.prompts import FRAME_DESCRIPTION, RESPONSE_AGENT, RETRIEVAL_AGENT
from .core import FrameRef, TimeRange, TimescaleConfig, format_range, is_range_query, parse_range
from .errors import ConfigError, InvalidArgument, ParseError, VidmemError
from .graph import PprParams
from .seeding import NODE_MATCH_THRESHOLD, NodeMatcher

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 5
MODEL_STOP = "model-stop"
BUDGET_EXHAUSTED = "budget-exhausted"


# ---------------------------------------------------------------------------
# evidence items
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaptionEvidence:
    segment_id: str
    range: TimeRange
    scale_ms: int
    caption: str

    def render(self) -> str:
        return f"[{format_range(self.range)}]\n{self.caption}"

    def ranges(self) -> list[TimeRange]:
        return [self.range]

    def to_record(self) -> dict:
        return {
            "type": "caption",
            "segment": self.segment_id,
            "range": self.range.to_list(),
            "scale": self.scale_ms,
            "caption": self.caption,
        }


@dataclass(frozen=True)
class TripletEvidence:
    subject: str
    predicate: str
    object: str
    score: float

    def render(self) -> str:
        return f"[{self.subject}, {self.predicate}, {self.object}]"

    def ranges(self) -> list[TimeRange]:
        return []

    def to_record(self) -> dict:
        return {"type": "triplet", "s": self.subject, "p": self.predicate, "o": self.object, "score": self.score}


@dataclass(frozen=True)
class VisualEvidence:
    range: TimeRange
    frames: tuple[FrameRef, ...]
    segment_id: str | None = None
    similarity: float | None = None
    description: str | None = None

    def render(self) -> str:
        head = f"[{format_range(self.range)}] {len(self.frames)} frame{'s' if len(self.frames) != 1 else ''}"
        if self.description:
            head += f"\nFrame description: {self.description}"
        return head

    def ranges(self) -> list[TimeRange]:
        return [self.range]

    def to_record(self) -> dict:
        rec = {"type": "visual", "range": self.range.to_list(), "frames": [f.to_record() for f in self.frames]}
        if self.segment_id is not None:
            rec["segment"] = self.segment_id
            rec["similarity"] = self.similarity
        if self.description is not None:
            rec["description"] = self.description
        return rec


Evidence = Union[CaptionEvidence, TripletEvidence, VisualEvidence]


def evidence_from_record(rec: Mapping) -> Evidence:
    kind = rec["type"]
    if kind == "caption":
        return CaptionEvidence(rec["segment"], TimeRange(*rec["range"]), int(rec["scale"]), rec["caption"])
    if kind == "triplet":
        return TripletEvidence(rec["s"], rec["p"], rec["o"], float(rec["score"]))
    if kind == "visual":
        return VisualEvidence(
            TimeRange(*rec["range"]),
            tuple(FrameRef.from_record(f) for f in rec["frames"]),
            rec.get("segment"),
            rec.get("similarity"),
            rec.get("description"),
        )
    raise InvalidArgument(f"unknown evidence type {kind!r}")


# ---------------------------------------------------------------------------
# rounds and traces
# ---------------------------------------------------------------------------


@dataclass
class RetrievalRound:
    index: int
    action: RetrievalAction
    retrieved: list[Evidence] = field(default_factory=list)
    error: str | None = None
    rejected: bool = False
    warnings: list[str] = field(default_factory=list)
    elapsed_ms: float = 0.0

    @property
    def is_search(self) -> bool:
        return isinstance(self.action, Search)

    @property
    def dispatched(self) -> bool:
        return self.is_search and not self.rejected

    def render(self) -> str:
        """One round in the decision prompt's history format."""
        if not self.is_search:
            return f"### Round {self.index}\nDecision: answer"
        lines = [
            f"### Round {self.index}",
            "Decision: search",
            f"Memory: {self.action.memory}",
            f"Search Query: {self.action.query}",
        ]
        if self.error is not None:
            lines.append(f"Retrieved: ERROR: {self.error}")
        elif not self.retrieved:
            lines.append("Retrieved: (no results)")
        else:
            lines.append("Retrieved:")
            lines.extend(e.render() for e in self.retrieved)
        return "\n".join(lines)

    def to_record(self) -> dict:
        rec: dict[str, Any] = {"index": self.index, "elapsed_ms": self.elapsed_ms}
        if self.is_search:
            rec.update(decision="search", memory=self.action.memory, query=self.action.query)
        else:
            rec.update(decision="answer", degraded=self.action.degraded)
        rec["rejected"] = self.rejected
        rec["error"] = self.error
        rec["warnings"] = list(self.warnings)
        rec["evidence"] = [e.to_record() for e in self.retrieved]
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> RetrievalRound:
        if rec["decision"] == "search":
            action: RetrievalAction = Search(rec["memory"], rec["query"])
        else:
            action = Stop(bool(rec.get("degraded", False)))
        return cls(
            index=int(rec["index"]),
            action=action,
            retrieved=[evidence_from_record(e) for e in rec.get("evidence", ())],
            error=rec.get("error"),
            rejected=bool(rec.get("rejected", False)),
            warnings=list(rec.get("warnings", ())),
            elapsed_ms=float(rec.get("elapsed_ms", 0.0)),
        )


def render_history(rounds: Sequence[RetrievalRound]) -> str:
    if not rounds:
        return "(no previous rounds)"
    return "\n\n".join(r.render() for r in rounds)


@dataclass
class AgentTrace:
    query: str
    rounds: list[RetrievalRound] = field(default_factory=list)
    stop_reason: str = MODEL_STOP
    answer: str | None = None
    choices: dict[str, str] | None = None
    enabled: tuple[str, ...] = MEMORY_KINDS
    flags: list[str] = field(default_factory=list)

    @property
    def degraded(self) -> bool:
        return any(isinstance(r.action, Stop) and r.action.degraded for r in self.rounds)

    def search_rounds(self) -> list[RetrievalRound]:
        return [r for r in self.rounds if r.is_search]

    def usage(self) -> Counter:
        """Memory selections per kind over dispatched (non-rejected) rounds."""
        return Counter(r.action.memory for r in self.rounds if r.dispatched)

    def evidence_ranges(self, last_only: bool = False) -> list[TimeRange]:
        rounds = [r for r in self.rounds if r.dispatched and r.retrieved]
        if last_only:
            rounds = rounds[-1:]
        return [rg for r in rounds for e in r.retrieved for rg in e.ranges()]

    def frames(self) -> list[FrameRef]:
        seen: dict[FrameRef, None] = {}
        for r in self.rounds:
            for e in r.retrieved:
                if isinstance(e, VisualEvidence):
                    for f in e.frames:
                        seen.setdefault(f, None)
        return list(seen)

    def to_record(self) -> dict:
        return {
            "query": self.query,
            "choices": self.choices,
            "enabled": format_mask(self.enabled),
            "rounds": [r.to_record() for r in self.rounds],
            "stop_reason": self.stop_reason,
            "answer": self.answer,
            "degraded": self.degraded,
            "flags": list(self.flags),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> AgentTrace:
        from .actions import parse_mask

        enabled = rec.get("enabled") or "E+S+V"
        return cls(
            query=rec["query"],
            rounds=[RetrievalRound.from_record(r) for r in rec["rounds"]],
            stop_reason=rec["stop_reason"],
            answer=rec.get("answer"),
            choices=rec.get("choices"),
            enabled=tuple(k for k in MEMORY_KINDS if k in parse_mask(enabled)),
            flags=list(rec.get("flags", ())),
        )

    def to_json(self) -> str:
        """Stable serialization: identical traces give identical bytes."""
        return json.dumps(self.to_record(), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> AgentTrace:
        return cls.from_record(json.loads(text))

    @property
    def digest(self) -> str:
        return digest(self.to_record())


def format_trace_table(trace: AgentTrace) -> str:
    """Human-readable trace: question, one block per round, final response."""
    pad = " " * 10
    out = [f"Question  {trace.query}"]
    if trace.choices:
        out.append(pad + " ".join(f"({k}) {v}" for k, v in sorted(trace.choices.items())))
    for r in trace.rounds:
        head = f"Round {r.index}".ljust(10)
        if not r.is_search:
            note = " (degraded: unparsable decision)" if r.action.degraded else ""
            out.append(f"{head}Decision: Answer{note}")
            continue
        out.append(f"{head}Decision: Search // Memory: {r.action.memory.capitalize()}")
        out.append(f"{pad}Search Query: {r.action.query}")
        if r.rejected:
            out.append(f"{pad}Rejected: {r.error}")
            continue
        if r.error is not None:
            out.append(f"{pad}Error: {r.error}")
            continue
        out.append(f"{pad}Retrieved:")
        if not r.retrieved:
            out.append(f"{pad}(no results)")
        for e in r.retrieved:
            out.extend(pad + line for line in e.render().splitlines())
    if trace.stop_reason == BUDGET_EXHAUSTED:
        out.append(f"{'Stop'.ljust(10)}retrieval budget exhausted")
    out.append(f"{'Response'.ljust(10)}{trace.answer if trace.answer is not None else '(unanswered)'}")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# configuration and wiring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentConfig:
    max_iters: int = DEFAULT_MAX_ITERS
    k_per_scale: int = ep.DEFAULT_K_PER_SCALE
    rerank_m: int = ep.DEFAULT_RERANK_M
    semantic_k: int = sm.DEFAULT_SEMANTIC_K
    visual_k: int = 3
    max_frames: int = vm.DEFAULT_MAX_FRAMES
    node_match_threshold: float = NODE_MATCH_THRESHOLD
    ppr: PprParams = PprParams()
    enabled: frozenset = frozenset(MEMORY_KINDS)
    describe_frames: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "enabled", frozenset(self.enabled))
        for name in ("max_iters", "k_per_scale", "rerank_m", "semantic_k", "visual_k", "max_frames"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {value!r}")
        if not 0 < self.node_match_threshold <= 1:
            raise InvalidArgument(f"node_match_threshold must lie in (0, 1], got {self.node_match_threshold}")
        if not self.enabled:
            raise InvalidArgument("at least one memory must be enabled")
        unknown = self.enabled - set(MEMORY_KINDS)
        if unknown:
            raise InvalidArgument(f"unknown memory kinds {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "max_iters": self.max_iters,
            "k_per_scale": self.k_per_scale,
            "rerank_m": self.rerank_m,
            "semantic_k": self.semantic_k,
            "visual_k": self.visual_k,
            "max_frames": self.max_frames,
            "node_match_threshold": self.node_match_threshold,
            "ppr": {
                "damping": self.ppr.damping,
                "tolerance": self.ppr.tolerance,
                "max_power_iters": self.ppr.max_power_iters,
                "directed": self.ppr.directed,
            },
            "enabled": format_mask(self.enabled),
            "describe_frames": self.describe_frames,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> AgentConfig:
        from .actions import parse_mask

        d = dict(d)
        if "ppr" in d:
            d["ppr"] = PprParams(**d["ppr"])
        if "enabled" in d:
            e = d["enabled"]
            d["enabled"] = parse_mask(e) if isinstance(e, str) else frozenset(e)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown agent settings {sorted(extra)}")
        return cls(**d)

    def fingerprint(self) -> str:
        return digest(self.to_dict())


@dataclass
class Memories:
    episodic: ep.EpisodicMemory | None = None
    semantic: sm.SemanticMemory | None = None
    visual: vm.VisualMemory | None = None
    timescales: TimescaleConfig | None = None

    def __post_init__(self):
        if self.timescales is None:
            self.timescales = self.episodic.config if self.episodic is not None else TimescaleConfig()

    def available(self) -> frozenset[str]:
        kinds = []
        if self.episodic is not None:
            kinds.append(EPISODIC)
        if self.semantic is not None:
            kinds.append(SEMANTIC)
        if self.visual is not None:
            kinds.append(VISUAL)
        return frozenset(kinds)


class Backends:
    """Backend role assignment.

    ``agent`` decides rounds, ``responder`` answers, ``memory`` serves NER,
    reranking and node embeddings, ``encoder`` embeds visual text queries and
    ``describer`` writes frame descriptions for a text-only responder.
    """

    def __init__(self, agent, responder=None, memory=None, encoder=None, describer=None, journal: PromptLog | None = None):
        self.agent = agent
        self.responder = responder or agent
        self.memory = memory or agent
        self.encoder = encoder or self.memory
        self.describer = describer or self.responder
        self.journal = journal
        self._matchers: dict[float, NodeMatcher] = {}
        self._lock = threading.Lock()

    def matcher(self, threshold: float) -> NodeMatcher:
        with self._lock:
            m = self._matchers.get(threshold)
            if m is None:
                m = self._matchers[threshold] = NodeMatcher(self.memory, threshold, self.journal)
            return m


Clock = Callable[[], float]


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


def decide(
    query: str, history: Sequence[RetrievalRound], backend, *, journal: PromptLog | None = None, frames=()
) -> RetrievalAction:
    """One decision. Unparsable output becomes a degraded Stop."""
    frames = tuple(frames) if getattr(backend, "multimodal", False) else ()
    raw = complete(backend, RETRIEVAL_AGENT, {"query": query, "history": render_history(history)}, frames, journal=journal)
    try:
        return parse_structured(raw, Schema.DECISION)
    except ParseError as exc:
        log.warning("unparsable agent decision (%s); stopping", exc)
        return Stop(degraded=True)


def _describe(evidence: VisualEvidence, backends: Backends) -> VisualEvidence:
    describer = backends.describer
    frames = evidence.frames if getattr(describer, "multimodal", False) else ()
    raw = complete(
        describer,
        FRAME_DESCRIPTION,
        {"range": format_range(evidence.range), "frame_count": str(len(evidence.frames))},
        frames,
        journal=backends.journal,
    )
    text = parse_structured(raw, Schema.FREE_TEXT)
    return VisualEvidence(evidence.range, evidence.frames, evidence.segment_id, evidence.similarity, text or None)


def _dispatch(action: Search, memories: Memories, config: AgentConfig, backends: Backends, rnd: RetrievalRound):
    matcher = backends.matcher(config.node_match_threshold)
    if action.memory == EPISODIC:
        res = ep.episodic_retrieve(
            memories.episodic, action.query, config.k_per_scale, backends.memory, matcher=matcher, params=config.ppr
        )
        rnd.warnings.extend(res.warnings)
        picked = ep.cross_scale_rerank(action.query, res.flatten(), config.rerank_m, backends.memory, journal=backends.journal)
        return [CaptionEvidence(s.id, s.range, s.scale_ms, s.caption) for s in picked]
    if action.memory == SEMANTIC:
        res = sm.semantic_retrieve(
            memories.semantic, action.query, config.semantic_k, backends.memory, matcher=matcher, params=config.ppr
        )
        rnd.warnings.extend(res.warnings)
        return [TripletEvidence(t.subject, t.predicate, t.object, s) for t, s in res.triplets]
    mem = memories.visual
    if is_range_query(action.query):
        rng = parse_range(action.query)
        frames = vm.timestamp_fetch(mem, rng, config.max_frames)
        return [VisualEvidence(rng, tuple(frames))] if frames else []
    qv = embed(backends.encoder, action.query)
    out = []
    for hit in vm.feature_search(mem, qv, config.visual_k):
        rng = mem.range_of(hit.segment_id)
        frames = tuple(vm.timestamp_fetch(mem, rng, config.max_frames))
        out.append(VisualEvidence(rng, frames, hit.segment_id, hit.similarity))
    return out


def run(
    query: str,
    memories: Memories,
    config: AgentConfig,
    backends: Backends,
    *,
    choices: Mapping[str, str] | None = None,
    clock: Clock | None = None,
) -> AgentTrace:
    """Run the retrieval loop for one question (no answer yet)."""
    missing = config.enabled - memories.available()
    if missing:
        raise ConfigError(f"enabled memories not built: {sorted(missing)}")
    clock = clock or time.perf_counter
    describe = config.describe_frames
    if describe is None:
        describe = not getattr(backends.responder, "multimodal", False)
    trace = AgentTrace(
        query,
        choices=dict(choices) if choices is not None else None,
        enabled=tuple(k for k in MEMORY_KINDS if k in config.enabled),
    )
    for index in range(1, config.max_iters + 1):
        t0 = clock()
        action = decide(query, trace.rounds, backends.agent, journal=backends.journal, frames=trace.frames())
        rnd = RetrievalRound(index, action)
        if isinstance(action, Stop):
            rnd.elapsed_ms = round((clock() - t0) * 1000.0, 3)
            trace.rounds.append(rnd)
            trace.stop_reason = MODEL_STOP
            break
        if action.memory not in config.enabled:
            rnd.rejected = True
            rnd.error = (
                f"{action.memory} memory is not available in this run "
                f"(enabled: {', '.join(trace.enabled)}); choose another memory or answer"
            )
        else:
            try:
                rnd.retrieved = _dispatch(action, memories, config, backends, rnd)
                if describe and action.memory == VISUAL:
                    rnd.retrieved = [_describe(e, backends) if e.frames else e for e in rnd.retrieved]
                    if rnd.retrieved and "frame-descriptions" not in trace.flags:
                        trace.flags.append("frame-descriptions")
            except VidmemError as exc:
                log.warning("round %d %s retrieval failed: %s", index, action.memory, exc)
                rnd.error = f"{type(exc).__name__}: {exc}"
                rnd.retrieved = []
        rnd.elapsed_ms = round((clock() - t0) * 1000.0, 3)
        trace.rounds.append(rnd)
    else:
        trace.stop_reason = BUDGET_EXHAUSTED
    return trace


def _render_choices(choices: Mapping[str, str]) -> str:
    return "\n".join(f"{k}. {v}" for k, v in sorted(choices.items()))


def respond(
    query: str, trace: AgentTrace, choices: Mapping[str, str], backend, *, journal: PromptLog | None = None
) -> str | None:
    """Pick one choice letter from the trace's evidence; ``None`` if unanswered."""
    if not choices:
        raise InvalidArgument("at least one choice is required")
    letters = sorted(c.upper() for c in choices)
    if len(letters) == 1:
        trace.answer = letters[0]
        return trace.answer
    frames = tuple(trace.frames()) if getattr(backend, "multimodal", False) else ()
    inputs = {"query": query, "choices": _render_choices(choices), "history": render_history(trace.rounds)}
    for attempt in range(2):
        raw = complete(backend, RESPONSE_AGENT, inputs, frames, journal=journal)
        try:
            trace.answer = parse_structured(raw, Schema.ANSWER_LETTER, choices=letters)
            return trace.answer
        except ParseError as exc:
            log.warning("responder gave no valid letter (attempt %d): %s", attempt + 1, exc)
            inputs = dict(inputs)
            inputs["choices"] = (
                _render_choices(choices) + f"\n\nReply with exactly one letter from: {', '.join(letters)}."
            )
    trace.answer = None
    if "unanswered" not in trace.flags:
        trace.flags.append("unanswered")
    return None


def answer_question(
    query: str,
    choices: Mapping[str, str],
    memories: Memories,
    config: AgentConfig,
    backends: Backends,
    *,
    clock: Clock | None = None,
) -> AgentTrace:
    """``run`` followed by ``respond``; the answer is stored on the trace."""
    trace = run(query, memories, config, backends, choices=choices, clock=clock)
    respond(query, trace, choices, backends.responder, journal=backends.journal)
    return trace


__all__ = [
    "AgentConfig",
    "AgentTrace",
    "Backends",
    "CaptionEvidence",
    "Memories",
    "RetrievalRound",
    "TripletEvidence",
    "VisualEvidence",
    "answer_question",
    "decide",
    "format_trace_table",
    "render_history",
    "respond",
    "run",
]
