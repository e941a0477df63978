"""Small scripted backends and random-state builders shared by the tests."""

from __future__ import annotations

import hashlib
import json
import re

import numpy as np

from vidmem.agent import Memories
from vidmem.backends import ScriptedBackend, hash_embedding
from vidmem.backends.prompts import (
    COARSE_CAPTION,
    EPISODIC_TRIPLES,
    NER,
    SEMANTIC_CONSOLIDATION,
    SEMANTIC_TRIPLES,
)
from vidmem.core import FrameRef, Segment, TimeRange, TimescaleConfig
from vidmem.episodic import build_episodic
from vidmem.graph import SEMANTIC, KnowledgeGraph, Triplet
from vidmem.semantic import SemanticMemory, consolidate
from vidmem.visual import VisualMemory, add_frames, index_segment


def const_clock() -> float:
    return 0.0


def entity_ner(mapping: dict[str, list[str]] | None = None):
    """NER handler: look the passage up, else split it into words."""
    mapping = mapping or {}

    def handler(req):
        passage = req.inputs["passage"]
        ents = mapping[passage] if passage in mapping else passage.split()
        return json.dumps({"named_entities": ents})

    return handler


def ner_backend(mapping=None, **kwargs) -> ScriptedBackend:
    return ScriptedBackend(handlers={NER: entity_ner(mapping)}, **kwargs)


# ---------------------------------------------------------------------------
# "word" captions: sentences of exactly three words, one triplet each
# ---------------------------------------------------------------------------


def caption_triples(text: str) -> list[list[str]]:
    body = text.split("\nTranscript:")[0]
    out = []
    for sent in re.split(r"[.;]\s*", body):
        words = sent.split()
        if len(words) == 3:
            out.append(words)
    return out


def _word_ner(req):
    ents = []
    for s, _, o in caption_triples(req.inputs["passage"]):
        ents += [s, o]
    if not ents:
        ents = req.inputs["passage"].split()
    return json.dumps({"named_entities": ents})


def _word_triples(req):
    return json.dumps({"triples": caption_triples(req.inputs["passage"])})


def _word_summary(req):
    caps = [line.split("] ", 1)[1] for line in req.inputs["captions"].splitlines() if "] " in line]
    return ". ".join(caps)


def _first_two_semantic(req):
    lines = req.inputs["episodic_triples"].splitlines()
    triples = [json.loads(line.split(". ", 1)[1]) for line in lines[:2]]
    return json.dumps({"semantic_triples": triples, "episodic_evidence": [[i] for i in range(len(triples))]})


def _hash_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def random_judge(req) -> str:
    """Deterministic pseudo-random judge: keeps, rewrites or drops, and removes some matches."""
    rng = np.random.default_rng(_hash_int(req.digest))
    new = json.loads(req.inputs["new_triple"])
    n_matched = len(req.inputs["existing_triples"].splitlines())
    roll = rng.random()
    if roll < 0.15:
        updated = []
    elif roll < 0.5:
        updated = [new[0], new[1], f"{new[2]} v{int(rng.integers(3))}"]
    else:
        updated = new
    remove = sorted({int(i) for i in rng.integers(0, n_matched + 1, size=int(rng.integers(0, 3)))})
    return json.dumps({"updated_triple": updated, "triples_to_remove": remove})


def subject_embedder(dim: int = 32):
    """Embeddings that make triplets sharing a subject similar (cosine ~0.8)."""

    def embed(text: str) -> np.ndarray:
        head = text.split()[0] if text.split() else text
        return hash_embedding(head, dim, 7) + 0.5 * hash_embedding(text, dim, 8)

    return embed


def word_backend(*, judge=random_judge, semantic=_first_two_semantic, **kwargs) -> ScriptedBackend:
    handlers = {
        NER: _word_ner,
        EPISODIC_TRIPLES: _word_triples,
        COARSE_CAPTION: _word_summary,
        SEMANTIC_TRIPLES: semantic,
        SEMANTIC_CONSOLIDATION: judge,
    }
    kwargs.setdefault("embedder", subject_embedder())
    return ScriptedBackend(handlers=handlers, **kwargs)


# ---------------------------------------------------------------------------
# random structures
# ---------------------------------------------------------------------------


def random_triples(rng: np.random.Generator, n_nodes: int, n_edges: int, n_preds: int = 3) -> list[tuple[str, str, str]]:
    nodes = [f"n{i}" for i in range(n_nodes)]
    out = []
    for _ in range(n_edges):
        s, o = rng.choice(nodes, size=2, replace=True)
        out.append((str(s), f"p{int(rng.integers(n_preds))}", str(o)))
    return out


def graph_from(triples, *, kind: str = SEMANTIC, starts: dict[str, int] | None = None, prov=None) -> KnowledgeGraph:
    g = KnowledgeGraph(kind)
    for i, (s, p, o) in enumerate(triples):
        pv = prov[i] if prov is not None else ()
        g.add(Triplet(s, p, o, frozenset(pv), kind))
    g.segment_starts.update(starts or {})
    return g


WORDS = ["alice", "bob", "carol", "dave", "kitchen", "garden", "tea", "piano", "phone", "car"]
VERBS = ["uses", "visits", "likes", "cleans"]


def random_caption(rng: np.random.Generator, n: int = 2) -> str:
    parts = []
    for _ in range(n):
        s, o = rng.choice(WORDS, size=2, replace=False)
        parts.append(f"{s} {rng.choice(VERBS)} {o}")
    return ". ".join(parts)


def random_memories(seed: int, *, with_semantic_journal: int = 3) -> Memories:
    """A small but fully populated memory state (all three kinds)."""
    rng = np.random.default_rng(seed)
    ts = TimescaleConfig(scales_ms=(1_000, 3_000), semantic_scale_ms=3_000, visual_scale_ms=1_000)
    n = int(rng.integers(3, 10))
    segs = [
        Segment(f"s{i}", TimeRange(i * 1_000, (i + 1) * 1_000), 1_000, random_caption(rng, int(rng.integers(1, 3))))
        for i in range(n)
    ]
    backend = word_backend(seed=seed)
    epi = build_episodic(segs, backend, ts)
    sem = SemanticMemory()
    for g in range(int(rng.integers(0, with_semantic_journal + 1))):
        incoming = [
            Triplet.build(str(rng.choice(WORDS)), str(rng.choice(VERBS)), str(rng.choice(WORDS)), {f"s{g % n}"}, SEMANTIC)
            for _ in range(int(rng.integers(1, 4)))
        ]
        sem = consolidate(sem, incoming, backend, segment_starts={f"s{g % n}": (g % n) * 1_000})
    vis = VisualMemory(1_000)
    for i in range(n):
        index_segment(vis, TimeRange(i * 1_000, (i + 1) * 1_000), rng.standard_normal(8) + 0.01, f"v{i}")
    ts_frames = sorted({int(x) for x in rng.integers(0, n * 1_000, size=int(rng.integers(0, 12)))})
    add_frames(vis, [FrameRef(t, f"frames/{t}.jpg") for t in ts_frames])
    return Memories(epi, sem, vis, ts)
