"""Synthetic long-video corpus with planted facts and an oracle backend.

The generator lays out a timeline of fine captions built from filler
sentences, then plants three kinds of facts:

* episodic events: a sentence in exactly one fine caption;
* visual scenes: present only in the frame descriptions (and the feature
  vector) of one visual segment;
* semantic habits: emitted only by the semantic extractor for a few windows.

Every question is answerable from exactly one kind of memory, so enabling or
disabling memories moves accuracy in a known direction. The oracle backend is
a set of pure handlers driven by a JSON script; it never sees the answers, it
only follows the per-question retrieval plan and picks the choice that appears
in the retrieved evidence.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._jsonio import canonical_json, write_jsonl
from .agent import AgentConfig
from .backends import ChatRequest, Schema, ScriptedBackend, hash_embedding, serialize_structured
from .backends import prompts as P
from .backends.parsing import SemanticExtraction
from .core import (
    MS_PER_HOUR,
    MS_PER_SECOND,
    FrameRef,
    Segment,
    TimeRange,
    TimescaleConfig,
    parse_range,
    parse_scale,
    partition_timeline,
)
from .evaluation import EvalItem
from .graph import normalize_entity, normalize_predicate
from .ingest import feature_record

SCRIPT_VERSION = 1
FRAME_STEP_MS = 5 * MS_PER_SECOND

NAMES = ["Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace", "Heidi"]

FILLER = [
    ("I walk through the hallway.", [("I", "walk through", "hallway")]),
    ("I check my phone.", [("I", "check", "phone")]),
    ("Alice waters the plants.", [("Alice", "waters", "plants")]),
    ("Bob tunes the guitar.", [("Bob", "tunes", "guitar")]),
    ("I wipe the dining table.", [("I", "wipe", "dining table")]),
    ("Carol folds the laundry.", [("Carol", "folds", "laundry")]),
    ("Dave sketches on the whiteboard.", [("Dave", "sketches on", "whiteboard")]),
    ("I open the fridge.", [("I", "open", "fridge")]),
    ("Erin sweeps the floor.", [("Erin", "sweeps", "floor")]),
    ("Frank reads a magazine.", [("Frank", "reads", "magazine")]),
    ("I drink some water.", [("I", "drink", "water")]),
    ("Grace adjusts the projector.", [("Grace", "adjusts", "projector")]),
    ("Heidi charges the camera.", [("Heidi", "charges", "camera")]),
    ("I chat with my friends.", [("I", "chat with", "friends")]),
]

OBJECTS = [
    "red kettle", "silver stapler", "wool scarf", "brass key", "paper lantern", "glass jar", "leather wallet",
    "tennis racket", "yoga mat", "rubber duck", "copper pan", "flower vase", "toy robot", "music box",
]
PLACES = [
    "piano bench", "window sill", "shoe rack", "bookshelf", "kitchen counter", "sofa arm", "balcony table",
    "coat hook", "bathroom shelf", "desk drawer", "laundry basket", "hallway cabinet", "bedside table",
    "garden bench",
]
PLACE_DECOYS = ["attic ladder", "garage shelf", "car trunk", "mail box", "fish tank", "tool chest", "wine rack"]

SCENES = [
    "blue bicycle", "yellow umbrella", "striped kite", "wooden canoe", "orange tent", "purple balloon",
    "white piano", "green tractor",
]
SCENE_PARTNERS = [
    "stone fountain", "red mailbox", "tall cactus", "iron gate", "straw hat", "clay pot", "neon sign", "brick oven",
]
SCENE_DECOYS = ["paper fan", "snow globe", "chess board", "bird cage", "bronze statue", "rope swing"]

DRINKS = [
    "oat milk", "jasmine tea", "black coffee", "mango juice", "barley tea", "coconut water", "iced latte", "hot cocoa",
]
DRINK_DECOYS = ["lemon soda", "plum wine", "green smoothie", "ginger ale", "rose syrup"]

DEFAULT_DESCRIPTION = "The frames show an ordinary room with nobody in view."

N_EPISODIC_FACTS, N_VISUAL_FACTS, N_SEMANTIC_FACTS = 14, 8, 8
N_EPISODIC_Q, N_VISUAL_Q, N_SEMANTIC_Q = 10, 5, 5
LETTERS = "ABCD"


@dataclass
class SyntheticCorpus:
    timescales: TimescaleConfig
    total_ms: int
    segments: list[Segment]
    features: list[tuple[str, TimeRange, np.ndarray]]
    frames: list[FrameRef]
    items: list[EvalItem]
    script: dict
    expected: dict = field(default_factory=dict)

    @property
    def mean_tiou(self) -> Fraction:
        return Fraction(self.expected["mean_tiou_exact"])


def synthetic_agent_config(**overrides) -> AgentConfig:
    """Agent settings the corpus is laid out for (one visual hit per search)."""
    overrides.setdefault("visual_k", 1)
    return AgentConfig(**overrides)


def _choices(rng: np.random.Generator, gold_text: str, decoys: list[str], gold_letters: str) -> tuple[dict, str]:
    picked = [str(x) for x in rng.choice(decoys, size=3, replace=False)]
    letter = gold_letters[int(rng.integers(len(gold_letters)))]
    slots = iter(picked)
    return {c: (gold_text if c == letter else next(slots)) for c in LETTERS}, letter


def _gold_range(rng: np.random.Generator, seg: TimeRange) -> TimeRange:
    span_s = seg.duration_ms // MS_PER_SECOND
    offset = int(rng.integers(0, span_s - 5 + 1))
    length = int(rng.integers(5, span_s - offset + 1))
    start = seg.start_ms + offset * MS_PER_SECOND
    return TimeRange(start, start + length * MS_PER_SECOND)


def generate(seed: int = 0, hours: int = 6, embed_dim: int = 64) -> SyntheticCorpus:
    """Build the corpus, its eval set, the oracle script and expected counts."""
    rng = np.random.default_rng(seed)
    timescales = TimescaleConfig()
    total = hours * MS_PER_HOUR
    fine = partition_timeline(total, timescales.fine_ms)

    slots = [int(i) for i in rng.choice(len(fine), size=N_EPISODIC_FACTS + N_VISUAL_FACTS, replace=False)]
    episodic_slots, visual_slots = slots[:N_EPISODIC_FACTS], slots[N_EPISODIC_FACTS:]

    sentence_triples = {s: [list(t) for t in ts] for s, ts in FILLER}
    plans: dict[str, list[list[str]]] = {}
    items: list[EvalItem] = []
    fact_sentence: dict[int, str] = {}

    for k, slot in enumerate(episodic_slots):
        who, obj, place = NAMES[k % len(NAMES)], OBJECTS[k], PLACES[k]
        sentence = f"{who} puts the {obj} on the {place}."
        sentence_triples[sentence] = [[who, "puts", obj], [obj, "placed on", place]]
        fact_sentence[slot] = sentence
        if k < N_EPISODIC_Q:
            question = f"Where did {who} put the {obj}?"
            choices, letter = _choices(rng, place, PLACE_DECOYS, LETTERS)
            items.append(
                EvalItem(f"ep-{k:02d}", question, choices, letter, (_gold_range(rng, fine[slot]),), "EventRecall")
            )
            plans[question] = [["episodic", obj]]

    visual_plants = []
    feature_vectors = {}
    for k, slot in enumerate(visual_slots):
        scene, partner = SCENES[k], SCENE_PARTNERS[k]
        visual_plants.append([fine[slot].start_ms, fine[slot].end_ms, f"The frames show a {scene} next to a {partner}."])
        feature_vectors[slot] = hash_embedding(scene, embed_dim, seed)
        if k < N_VISUAL_Q:
            question = f"What was next to the {scene}?"
            choices, letter = _choices(rng, partner, SCENE_DECOYS, LETTERS[1:])
            items.append(
                EvalItem(f"vi-{k:02d}", question, choices, letter, (_gold_range(rng, fine[slot]),), "EntityLog")
            )
            plans[question] = [["episodic", scene], ["visual", scene]]

    windows = partition_timeline(total, timescales.semantic_scale_ms)
    semantic_plants: dict[str, list[list[str]]] = {}
    for k in range(N_SEMANTIC_FACTS):
        who, drink = NAMES[k], DRINKS[k]
        for w in sorted(int(i) for i in rng.choice(len(windows), size=2, replace=False)):
            semantic_plants.setdefault(str(windows[w].start_ms), []).append([who, "usually drinks", drink])
        if k < N_SEMANTIC_Q:
            question = f"What does {who} usually drink?"
            choices, letter = _choices(rng, drink, DRINK_DECOYS, LETTERS[1:])
            items.append(EvalItem(f"se-{k:02d}", question, choices, letter, (), "HabitInsight"))
            plans[question] = [["semantic", who]]

    segments = []
    fine_keys: set[tuple] = set()
    for i, rng_i in enumerate(fine):
        picks = rng.choice(len(FILLER), size=2, replace=False)
        sentences = [FILLER[int(j)][0] for j in picks]
        if i in fact_sentence:
            sentences.insert(1, fact_sentence[i])
        for s in sentences:
            for t in sentence_triples[s]:
                fine_keys.add((normalize_entity(t[0]), normalize_predicate(t[1]), normalize_entity(t[2])))
        segments.append(Segment(f"f{i:04d}", rng_i, timescales.fine_ms, " ".join(sentences)))

    features = []
    for i, rng_i in enumerate(fine):
        vec = feature_vectors.get(i)
        if vec is None:
            vec = rng.standard_normal(embed_dim)
            vec /= np.linalg.norm(vec)
        features.append((f"v{i:04d}", rng_i, vec))
    frames = [FrameRef(t, f"synthetic://frame/{t}") for t in range(0, total, FRAME_STEP_MS)]

    lexicon = sorted(
        {*NAMES, *OBJECTS, *PLACES, *SCENES, *SCENE_PARTNERS, *DRINKS}
        | {t[2] for _, ts in FILLER for t in ts},
        key=lambda x: (-len(x), x),
    )
    script = {
        "version": SCRIPT_VERSION,
        "embed_dim": embed_dim,
        "seed": seed,
        "lexicon": lexicon,
        "sentence_triples": sentence_triples,
        "plans": plans,
        "visual_plants": visual_plants,
        "default_description": DEFAULT_DESCRIPTION,
        "semantic_plants": semantic_plants,
    }

    gold = [it for it in items if it.gold_ranges]
    mean = sum((Fraction(it.gold_ranges[0].duration_ms, timescales.fine_ms) for it in gold), Fraction(0)) / len(gold)
    semantic_keys = {
        (normalize_entity(s), normalize_predicate(p), normalize_entity(o))
        for ts in semantic_plants.values()
        for s, p, o in ts
    }
    expected = {
        "total_ms": total,
        "n_facts": N_EPISODIC_FACTS + N_VISUAL_FACTS + N_SEMANTIC_FACTS,
        "n_items": len(items),
        "segments": {str(s): len(partition_timeline(total, s)) for s in timescales.scales_ms},
        "episodic_edges": {str(s): len(fine_keys) for s in timescales.scales_ms},
        "semantic_edges": len(semantic_keys),
        "semantic_generations": len(semantic_plants),
        "visual_features": len(features),
        "frames": len(frames),
        "mean_tiou_exact": f"{mean.numerator}/{mean.denominator}",
        "mean_tiou": float(mean),
        "accuracy_by_mask": {
            "E": Fraction(N_EPISODIC_Q, len(items)).__float__(),
            "E+S": Fraction(N_EPISODIC_Q + N_SEMANTIC_Q, len(items)).__float__(),
            "E+V": Fraction(N_EPISODIC_Q + N_VISUAL_Q, len(items)).__float__(),
            "E+S+V": 1.0,
        },
    }
    return SyntheticCorpus(timescales, total, segments, features, frames, items, script, expected)


# ---------------------------------------------------------------------------
# oracle backend
# ---------------------------------------------------------------------------

_SENTENCE = re.compile(r"[^.!?]+[.!?]")
_LINE_PREFIX = re.compile(r"^\s*\[[^\]]*\]\s*")
_CANDIDATE = re.compile(r"^\[ID (\d+)\] scale=(\S+) time=.*$")
_NUMBERED = re.compile(r"^\s*(\d+)\.\s*(\[.*\])\s*$")
_CHOICE = re.compile(r"^([A-Z])\.\s*(.*)$")


def _sentences(text: str) -> list[str]:
    return [m.group(0).strip() for m in _SENTENCE.finditer(text)]


def _key(triple) -> tuple[str, str, str]:
    s, p, o = triple
    return normalize_entity(s), normalize_predicate(p), normalize_entity(o)


class _Oracle:
    def __init__(self, script: dict):
        if script.get("version") != SCRIPT_VERSION:
            raise ValueError(f"unsupported synthetic script version {script.get('version')!r}")
        self.s = script
        self.lexicon = [(e, re.compile(rf"(?<![\w]){re.escape(e.lower())}(?![\w])")) for e in script["lexicon"]]
        self.plants = [(TimeRange(a, b), d) for a, b, d in script["visual_plants"]]

    def ner(self, req: ChatRequest) -> str:
        text = req.inputs["passage"]
        low = text.lower()
        found = []
        for entity, pat in self.lexicon:
            m = pat.search(low)
            if m:
                found.append((m.start(), entity))
        if re.search(r"\bI\b", text):
            found.append((text.index("I"), "I"))
        return serialize_structured([e for _, e in sorted(found)], Schema.ENTITY_LIST)

    def triples(self, req: ChatRequest) -> str:
        out = []
        for s in _sentences(req.inputs["passage"]):
            out.extend(self.s["sentence_triples"].get(s, []))
        return serialize_structured(out, Schema.TRIPLE_LIST)

    def summarize(self, req: ChatRequest) -> str:
        seen: dict[str, None] = {}
        for line in req.inputs["captions"].splitlines():
            for s in _sentences(_LINE_PREFIX.sub("", line)):
                seen.setdefault(s, None)
        return " ".join(seen)

    def rerank(self, req: ChatRequest) -> str:
        query = req.inputs["query"].lower()
        hits: list[tuple[int, int]] = []
        current = None
        for line in req.inputs["candidates"].splitlines():
            m = _CANDIDATE.match(line)
            if m:
                current = (int(m.group(1)), parse_scale(m.group(2)))
            elif current is not None and line.strip():
                if query in line.lower():
                    hits.append((current[1], current[0]))
                current = None
        if not hits:
            return "[]"
        finest = min(scale for scale, _ in hits)
        return json.dumps([str(i) for scale, i in hits if scale == finest])

    def semantic_extract(self, req: ChatRequest) -> str:
        window = parse_range(req.inputs["window"])
        planted = self.s["semantic_plants"].get(str(window.start_ms), [])
        return serialize_structured(SemanticExtraction(planted, [[0] for _ in planted]), Schema.SEMANTIC_TRIPLES)

    def judge(self, req: ChatRequest) -> str:
        new = json.loads(req.inputs["new_triple"])
        remove = []
        for line in req.inputs["existing_triples"].splitlines():
            m = _NUMBERED.match(line)
            if m and _key(json.loads(m.group(2))) == _key(new):
                remove.append(int(m.group(1)))
        return json.dumps({"updated_triple": new, "triples_to_remove": remove})

    def decide(self, req: ChatRequest) -> str:
        plan = self.s["plans"].get(req.inputs["query"], [])
        done = req.inputs["history"].count("### Round ")
        if done < len(plan):
            kind, query = plan[done]
            return json.dumps({"decision": "search", "selected_memory": {"memory_type": kind, "search_query": query}})
        return json.dumps({"decision": "answer"})

    def describe(self, req: ChatRequest) -> str:
        rng = parse_range(req.inputs["range"])
        texts = [d for r, d in self.plants if r.overlaps(rng)]
        return " ".join(texts) if texts else self.s["default_description"]

    def respond(self, req: ChatRequest) -> str:
        history = req.inputs["history"].lower()
        letters = []
        for line in req.inputs["choices"].splitlines():
            m = _CHOICE.match(line.strip())
            if m:
                letters.append(m.group(1))
                if m.group(2).strip().lower() in history:
                    return m.group(1)
        return letters[0] if letters else "A"


def oracle_backend(script: dict, *, name: str = "synthetic-oracle") -> ScriptedBackend:
    o = _Oracle(script)
    handlers = {
        P.NER: o.ner,
        P.EPISODIC_TRIPLES: o.triples,
        P.COARSE_CAPTION: o.summarize,
        P.CROSS_SCALE_RERANK: o.rerank,
        P.SEMANTIC_TRIPLES: o.semantic_extract,
        P.SEMANTIC_CONSOLIDATION: o.judge,
        P.RETRIEVAL_AGENT: o.decide,
        P.FRAME_DESCRIPTION: o.describe,
        P.RESPONSE_AGENT: o.respond,
    }
    return ScriptedBackend(handlers=handlers, embed_dim=script["embed_dim"], seed=script["seed"], name=name)


def write_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Write every input file the CLI needs to build and evaluate the corpus."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "segments": out / "segments.jsonl",
        "features": out / "features.jsonl",
        "frames": out / "frames.jsonl",
        "evalset": out / "evalset.jsonl",
        "script": out / "script.json",
        "config": out / "config.json",
        "expected": out / "expected.json",
    }
    write_jsonl(paths["segments"], (s.to_record() for s in corpus.segments))
    write_jsonl(paths["features"], (feature_record(*f) for f in corpus.features))
    write_jsonl(paths["frames"], (f.to_record() for f in corpus.frames))
    write_jsonl(paths["evalset"], (it.to_record() for it in corpus.items))
    paths["script"].write_text(canonical_json(corpus.script) + "\n", encoding="utf-8")
    config = {
        "timescales": corpus.timescales.to_dict(),
        "memories": "E+S+V",
        "agent": synthetic_agent_config().to_dict(),
        "backends": {"default": {"type": "synthetic", "script": "script.json"}},
    }
    paths["config"].write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["expected"].write_text(json.dumps(corpus.expected, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
