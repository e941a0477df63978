"""Entity/triplet knowledge graph with Personalized PageRank scoring."""

from __future__ import annotations

import logging
import math
import re
import string
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import kernels
from .errors import DegenerateEntity, InternalConsistencyError, InvalidArgument, UnknownNode

log = logging.getLogger(__name__)

EPISODIC = "episodic"
SEMANTIC = "semantic"

# Scores are compared at this many decimals when ranking, so that values equal
# up to solver noise fall through to the deterministic tie-break.
SCORE_DECIMALS = 9

_STRIP = string.punctuation + string.whitespace + "“”‘’«»…–—·•"
_WS = re.compile(r"\s+")


def normalize_entity(surface: str) -> str:
    """Lowercase, collapse whitespace, strip surrounding punctuation."""
    text = _WS.sub(" ", str(surface).lower()).strip(_STRIP)
    text = _WS.sub(" ", text)
    if not text:
        raise DegenerateEntity(f"entity {surface!r} is empty after normalization")
    return text


def normalize_predicate(surface: str) -> str:
    text = _WS.sub(" ", str(surface).lower()).strip(_STRIP)
    if not text:
        raise DegenerateEntity(f"predicate {surface!r} is empty after normalization")
    return text


@dataclass(frozen=True)
class Triplet:
    subject: str
    predicate: str
    object: str
    provenance: frozenset[str] = frozenset()
    kind: str = EPISODIC

    @classmethod
    def build(cls, subject, predicate, obj, provenance: Iterable[str] = (), kind: str = EPISODIC) -> Triplet:
        return cls(
            normalize_entity(subject),
            normalize_predicate(predicate),
            normalize_entity(obj),
            frozenset(str(p) for p in provenance),
            kind,
        )

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)

    @property
    def text(self) -> str:
        """Text used for embedding-based matching."""
        return f"{self.subject} {self.predicate} {self.object}"

    def with_provenance(self, provenance: Iterable[str]) -> Triplet:
        return Triplet(self.subject, self.predicate, self.object, frozenset(provenance), self.kind)

    def to_record(self) -> dict:
        return {
            "s": self.subject,
            "p": self.predicate,
            "o": self.object,
            "provenance": sorted(self.provenance),
            "kind": self.kind,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> Triplet:
        return cls(rec["s"], rec["p"], rec["o"], frozenset(rec.get("provenance", ())), rec.get("kind", EPISODIC))

    def __str__(self) -> str:
        return f"[{self.subject}, {self.predicate}, {self.object}]"


@dataclass(frozen=True)
class PprParams:
    damping: float = 0.85
    tolerance: float = 1e-8
    max_power_iters: int = 200
    directed: bool = False

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise InvalidArgument(f"damping must lie in (0, 1), got {self.damping}")
        if not self.tolerance > 0:
            raise InvalidArgument(f"tolerance must be positive, got {self.tolerance}")
        if self.max_power_iters < 1:
            raise InvalidArgument(f"max_power_iters must be >= 1, got {self.max_power_iters}")


@dataclass
class _Csr:
    nodes: list[str]
    index: dict[str, int]
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray


class KnowledgeGraph:
    """Triplet store keyed by ``(subject, predicate, object)``.

    Re-inserting a key merges provenance. Nodes are exactly the endpoints of
    stored triplets. ``segment_starts`` maps provenance ids to their start time
    and is only used for deterministic tie-breaking.
    """

    def __init__(self, kind: str = EPISODIC):
        self.kind = kind
        self._edges: dict[tuple[str, str, str], Triplet] = {}
        self._node_edges: dict[str, set[tuple[str, str, str]]] = {}
        self.segment_starts: dict[str, int] = {}
        self._csr: dict[bool, _Csr] = {}
        self._incidence: dict[str, frozenset[str]] | None = None

    # -- inspection -------------------------------------------------------

    def __len__(self) -> int:
        return len(self._edges)

    def __contains__(self, key) -> bool:
        if isinstance(key, Triplet):
            key = key.key
        return key in self._edges

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.kind == other.kind and self._edges == other._edges and self.segment_starts == other.segment_starts

    def __repr__(self) -> str:
        return f"KnowledgeGraph(kind={self.kind!r}, nodes={len(self._node_edges)}, edges={len(self._edges)})"

    @property
    def nodes(self) -> list[str]:
        return sorted(self._node_edges)

    @property
    def edges(self) -> list[Triplet]:
        return [self._edges[k] for k in sorted(self._edges)]

    def edge_keys(self) -> set[tuple[str, str, str]]:
        return set(self._edges)

    def get(self, key) -> Triplet | None:
        return self._edges.get(key)

    def has_node(self, node: str) -> bool:
        return node in self._node_edges

    def node_edges(self, node: str) -> list[Triplet]:
        return [self._edges[k] for k in sorted(self._node_edges.get(node, ()))]

    def incidence(self) -> dict[str, frozenset[str]]:
        """node -> segment ids of every triplet touching the node."""
        if self._incidence is None:
            inc: dict[str, set[str]] = {}
            for t in self._edges.values():
                for n in (t.subject, t.object):
                    inc.setdefault(n, set()).update(t.provenance)
            self._incidence = {n: frozenset(s) for n, s in inc.items() if s}
        return self._incidence

    def segments(self) -> set[str]:
        out: set[str] = set()
        for t in self._edges.values():
            out |= t.provenance
        return out

    def earliest_start(self, t: Triplet) -> float:
        starts = [self.segment_starts[p] for p in t.provenance if p in self.segment_starts]
        return min(starts) if starts else math.inf

    # -- mutation (in place; callers that need generations use copy()) ---

    def _touch(self):
        self._csr.clear()
        self._incidence = None

    def add(self, t: Triplet) -> Triplet:
        existing = self._edges.get(t.key)
        if existing is not None:
            if t.provenance <= existing.provenance:
                return existing
            t = existing.with_provenance(existing.provenance | t.provenance)
        self._edges[t.key] = t
        self._node_edges.setdefault(t.subject, set()).add(t.key)
        self._node_edges.setdefault(t.object, set()).add(t.key)
        self._touch()
        return t

    def remove(self, key) -> Triplet:
        if isinstance(key, Triplet):
            key = key.key
        t = self._edges.pop(key)
        for n in (t.subject, t.object):
            refs = self._node_edges.get(n)
            if refs is not None:
                refs.discard(key)
                if not refs:
                    del self._node_edges[n]
        self._touch()
        return t

    def copy(self) -> KnowledgeGraph:
        g = KnowledgeGraph(self.kind)
        g._edges = dict(self._edges)
        g._node_edges = {n: set(ks) for n, ks in self._node_edges.items()}
        g.segment_starts = dict(self.segment_starts)
        return g

    # -- scoring support --------------------------------------------------

    def transition_csr(self, directed: bool = False) -> _Csr:
        """Column-stochastic transition matrix over the node adjacency.

        Undirected: each triplet contributes weight 1 to both (s, o) and
        (o, s); a self-referencing triplet contributes 1 to the diagonal.
        Directed: weight flows subject -> object only. Nodes without any
        outgoing weight get a self-loop.
        """
        cached = self._csr.get(directed)
        if cached is not None:
            return cached
        nodes = self.nodes
        index = {n: i for i, n in enumerate(nodes)}
        n = len(nodes)
        src, dst = [], []
        for s, _, o in self._edges:
            i, j = index[s], index[o]
            src.append(i)
            dst.append(j)
            if not directed and i != j:
                src.append(j)
                dst.append(i)
        src_a = np.asarray(src, dtype=np.int64)
        dst_a = np.asarray(dst, dtype=np.int64)
        out_deg = np.bincount(src_a, minlength=n).astype(np.float64)
        dangling = np.flatnonzero(out_deg == 0)
        if dangling.size:
            src_a = np.concatenate((src_a, dangling))
            dst_a = np.concatenate((dst_a, dangling))
            out_deg[dangling] = 1.0
        # W[dst, src] = count / out_deg[src]; merge parallel arcs.
        flat, counts = np.unique(dst_a * max(n, 1) + src_a, return_counts=True)
        rows = flat // max(n, 1)
        cols = flat % max(n, 1)
        weights = counts / out_deg[cols]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        csr = _Csr(nodes, index, indptr, cols.astype(np.int64), weights.astype(np.float64))
        self._csr[directed] = csr
        return csr

    # -- persistence records ----------------------------------------------

    def to_records(self) -> list[dict]:
        recs = [{"type": "triplet", **t.to_record()} for t in self.edges]
        recs += [{"type": "segment_start", "segment": k, "start": v} for k, v in sorted(self.segment_starts.items())]
        return recs

    @classmethod
    def from_records(cls, records: Iterable[Mapping], kind: str = EPISODIC) -> KnowledgeGraph:
        g = cls(kind)
        for rec in records:
            if rec["type"] == "triplet":
                g.add(Triplet.from_record(rec))
            elif rec["type"] == "segment_start":
                g.segment_starts[rec["segment"]] = int(rec["start"])
            else:
                raise InvalidArgument(f"unknown graph record type {rec['type']!r}")
        return g


def coerce_triplet(item, provenance: Iterable[str] = (), kind: str = EPISODIC) -> Triplet:
    if isinstance(item, Triplet):
        return Triplet.build(item.subject, item.predicate, item.object, item.provenance | set(provenance), item.kind)
    if len(item) != 3:
        raise DegenerateEntity(f"triplet must have three parts, got {item!r}")
    s, p, o = item
    return Triplet.build(s, p, o, provenance, kind)


def upsert_triplets(
    graph: KnowledgeGraph,
    triplets: Iterable,
    *,
    on_error: Callable[[object, Exception], None] | None = None,
) -> KnowledgeGraph:
    """Return a new graph with ``triplets`` merged in.

    Degenerate items are skipped; each one is logged and reported through
    ``on_error`` while the rest of the batch proceeds.
    """
    g = graph.copy()
    for item in triplets:
        try:
            t = coerce_triplet(item)
        except DegenerateEntity as exc:
            log.warning("rejected triplet %r: %s", item, exc)
            if on_error is not None:
                on_error(item, exc)
            continue
        g.add(t)
    return g


@dataclass
class PprResult:
    scores: dict[str, float]
    converged: bool
    iterations: int
    delta: float
    vector: np.ndarray = field(repr=False, default=None)

    def __getitem__(self, node: str) -> float:
        return self.scores[node]


def seed_vector(graph: KnowledgeGraph, seeds: Mapping[str, float], directed: bool = False) -> np.ndarray:
    if not seeds:
        raise InvalidArgument("at least one seed node is required")
    csr = graph.transition_csr(directed)
    vec = np.zeros(len(csr.nodes))
    for node, w in seeds.items():
        i = csr.index.get(node)
        if i is None:
            raise UnknownNode(f"seed node {node!r} is not in the graph")
        if w < 0:
            raise InvalidArgument(f"negative seed weight for {node!r}")
        vec[i] += w
    total = vec.sum()
    if abs(total - 1.0) > 1e-9:
        raise InvalidArgument(f"seed weights must sum to 1, got {total}")
    return vec


def ppr(graph: KnowledgeGraph, seeds: Mapping[str, float], params: PprParams = PprParams()) -> PprResult:
    """Personalized PageRank by power iteration.

    Iterates ``x <- (1 - d) * seed + d * W @ x`` until the L1 change drops
    below ``params.tolerance``. Non-convergence is reported, not raised.
    """
    seed = seed_vector(graph, seeds, params.directed)
    csr = graph.transition_csr(params.directed)
    x, iters, delta = kernels.ppr_power(
        csr.indptr, csr.indices, csr.weights, seed, params.damping, params.tolerance, params.max_power_iters
    )
    converged = delta < params.tolerance
    if not converged:
        log.warning("PPR did not converge in %d iterations (delta=%.3g)", iters, delta)
    return PprResult(dict(zip(csr.nodes, x.tolist())), converged, iters, delta, x)


def rank_key(score: float) -> float:
    return -round(float(score), SCORE_DECIMALS)


def edge_scores(graph: KnowledgeGraph, node_scores) -> list[tuple[Triplet, float]]:
    """Score each edge by the sum of its endpoint scores, best first.

    Ties (at ``SCORE_DECIMALS``) break on earliest provenance start, then on
    the ``(subject, predicate, object)`` key.
    """
    scores = node_scores.scores if isinstance(node_scores, PprResult) else node_scores
    out = []
    for t in graph.edges:
        try:
            val = scores[t.subject] + scores[t.object]
        except KeyError as exc:
            raise InternalConsistencyError(f"no score for endpoint {exc.args[0]!r} of {t}") from None
        out.append((t, float(val)))
    out.sort(key=lambda ts: (rank_key(ts[1]), graph.earliest_start(ts[0]), ts[0].key))
    return out
