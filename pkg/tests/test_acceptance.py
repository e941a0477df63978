"""Exit criteria, one test per criterion, each reported as a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (the verdicts are repeated in the
terminal summary under "acceptance criteria").
"""

from __future__ import annotations

import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

import aircon_replay
from acceptance_log import criterion
from helpers import graph_from, ner_backend, random_judge, random_memories, random_triples, subject_embedder
from oracles import brute_tiou, brute_topk, dense_ppr, floor_subsample, rank_edges
from vidmem.agent import Backends, answer_question, run
from vidmem.backends import ScriptedBackend
from vidmem.backends.prompts import RETRIEVAL_AGENT, SEMANTIC_CONSOLIDATION
from vidmem.cli import EXIT_OK, main
from vidmem.core import FrameRef, TimeRange, tiou, tiou_fraction
from vidmem.errors import SnapshotError
from vidmem.graph import SEMANTIC, PprParams, Triplet, ppr
from vidmem.semantic import ConsolidationRecord, SemanticMemory, consolidate, semantic_retrieve
from vidmem.store import load, save, snapshot_digest
from vidmem.visual import VisualMemory, add_frames, build_visual, feature_search, timestamp_fetch

pytestmark = pytest.mark.acceptance

FIXTURES = Path(__file__).parent / "fixtures"
ZERO = lambda: 0.0  # noqa: E731


def test_criterion_1_ppr_matches_dense_oracle():
    with criterion(1, "PPR equals dense power iteration on 200 graphs, max error < 1e-6, < 30 s"):
        rng = np.random.default_rng(1)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(200):
            triples = random_triples(rng, int(rng.integers(1, 51)), int(rng.integers(1, 151)), n_preds=4)
            g = graph_from(triples)
            assert len(g.nodes) <= 50 and len(g) <= 150
            picks = rng.choice(g.nodes, size=int(rng.integers(1, min(5, len(g.nodes)) + 1)), replace=False)
            w = rng.random(len(picks)) + 0.1
            seeds = {str(n): float(x) for n, x in zip(picks, w / w.sum())}
            directed = bool(rng.integers(2))
            got = ppr(g, seeds, PprParams(directed=directed)).scores
            want = dense_ppr(g.nodes, [(s, o) for s, _, o in g.edge_keys()], seeds, directed=directed)
            worst = max(worst, max(abs(got[n] - want[n]) for n in g.nodes))
        elapsed = time.perf_counter() - t0
        assert worst < 1e-6, worst
        assert elapsed < 30, elapsed


def test_criterion_2_edge_ranking_matches_enumeration():
    with criterion(2, "semantic top-k equals endpoint-sum enumeration on 100 fixtures"):
        rng = np.random.default_rng(2)
        ner = ner_backend()
        for _ in range(100):
            n_nodes = int(rng.integers(2, 12))
            triples = random_triples(rng, n_nodes, int(rng.integers(1, 30)))
            prov = [{f"s{int(rng.integers(5))}"} for _ in triples]
            starts = {f"s{i}": int(rng.integers(3)) * 1_000 for i in range(5)}
            mem = SemanticMemory()
            mem.graph = graph_from(triples, prov=prov, starts=starts)
            picks = sorted({str(x) for x in rng.choice(mem.graph.nodes, size=min(2, len(mem.graph.nodes)), replace=False)})
            k = int(rng.integers(1, 15))
            res = semantic_retrieve(mem, " ".join(picks), k, ner)
            scores = ppr(mem.graph, {n: 1 / len(picks) for n in picks}).scores
            earliest: dict = {}
            for t, p in zip(triples, prov):
                earliest[t] = min(earliest.get(t, float("inf")), *(starts[x] for x in p))
            assert [t.key for t, _ in res.triplets] == rank_edges(triples, scores, earliest, k)


WORDS = ["alice", "bob", "carol", "dave"]
OBJECTS = ["tea", "coffee", "piano", "garden", "car", "phone", "kitchen", "chess"]
VERBS = ["likes", "uses", "visits", "cleans"]


def test_criterion_3_consolidation_algebra_and_replay():
    with criterion(3, "update identity holds over 50 generations; journal replay is bit-exact"):
        rng = np.random.default_rng(3)
        b = ScriptedBackend(handlers={SEMANTIC_CONSOLIDATION: random_judge}, embedder=subject_embedder())
        mem = SemanticMemory()
        total_removed = 0
        for gen in range(50):
            incoming = [
                Triplet.build(str(rng.choice(WORDS)), str(rng.choice(VERBS)), str(rng.choice(OBJECTS)), {f"s{gen}"}, SEMANTIC)
                for _ in range(int(rng.integers(1, 5)))
            ]
            prev = mem.graph.edge_keys()
            mem = consolidate(mem, incoming, b, segment_starts={f"s{gen}": gen * 1_000})
            rec = mem.journal[-1]
            removed = {t.key for t in rec.removed}
            assert removed <= prev
            assert mem.graph.edge_keys() == (prev - removed) | {t.key for t in rec.updated}
            total_removed += len(removed)
        assert mem.generation == 50 and total_removed > 0
        wire = [json.loads(json.dumps(r.to_record())) for r in mem.journal]
        again = SemanticMemory.replay([ConsolidationRecord.from_record(r) for r in wire])
        assert json.dumps(again.graph.to_records(), sort_keys=True) == json.dumps(mem.graph.to_records(), sort_keys=True)
        assert again.graph == mem.graph


def _intervals(rng, n):
    out = []
    for _ in range(n):
        s = int(rng.integers(0, 999_000))
        out.append((s, s + int(rng.integers(1, 1_000_000 - s))))
    return out


def test_criterion_4_tiou_matches_brute_force():
    with criterion(4, "tIoU equals 1 ms brute force on 1000 sets to 1e-9; [0,30)/[15,45) is 1/3"):
        assert tiou_fraction([TimeRange(0, 30)], [TimeRange(15, 45)]) == Fraction(1, 3)
        rng = np.random.default_rng(4)
        for _ in range(1_000):
            a = _intervals(rng, int(rng.integers(1, 5)))
            b = _intervals(rng, int(rng.integers(1, 5)))
            assert abs(tiou(a, b) - brute_tiou(a, b)) <= 1e-9


def test_criterion_5_visual_search_and_subsampling():
    with criterion(5, "feature search equals full scan for k in {1,5,20}; subsampling matches the floor formula"):
        rng = np.random.default_rng(5)
        for _ in range(5):
            vecs = rng.standard_normal((1_000, 16))
            vecs[rng.integers(0, 1_000, 50)] = vecs[0]  # ties
            mem = build_visual([(f"v{i}", (i * 10, (i + 1) * 10), v) for i, v in enumerate(vecs)], visual_scale_ms=10)
            starts = list(range(1_000))
            for q in [rng.standard_normal(16), vecs[0], vecs[17]]:
                for k in (1, 5, 20):
                    got = [int(h.segment_id[1:]) for h in feature_search(mem, q, k)]
                    assert got == brute_topk(vecs, starts, q, k)
        for n in range(0, 301):
            for m in range(1, 31):
                vis = VisualMemory()
                add_frames(vis, [FrameRef(1_000 + 7 * i, f"f{i}") for i in range(n)])
                got = timestamp_fetch(vis, TimeRange(1_000, 1_000 + 7 * n + 1), m)
                assert [int(f.locator[1:]) for f in got] == floor_subsample(n, m)


def _adversary(seed):
    rng = np.random.default_rng(seed)
    pool = [
        json.dumps({"decision": "search", "selected_memory": {"memory_type": m, "search_query": q}})
        for m in ("episodic", "semantic", "visual")
        for q in ("air conditioning", "DAY2 18:33:00-18:34:00", "hot pot", "")
    ] + ['{"decision": "answer"}', "keep searching", '{"decision": "search"}', "{}", "[" * 50]
    if seed % 2 == 0:
        # never stops of its own accord: only well-formed searches
        pool = [p for p in pool if '"search_query": ""' not in p and "selected_memory" in p]
    script = [pool[int(rng.integers(len(pool)))] for _ in range(12)]

    def decide(req):
        return script[req.inputs["history"].count("### Round ") % len(script)]

    return decide


def test_criterion_6_budget_determinism_and_golden_trace():
    with criterion(6, "at most 5 search rounds under adversarial decisions; byte-identical traces; golden replay answers A"):
        exhausted = 0
        for seed in range(300):
            b = aircon_replay.backend()
            b.handlers[RETRIEVAL_AGENT] = _adversary(seed)
            trace = run(aircon_replay.QUESTION, aircon_replay.memories(b), aircon_replay.config(), Backends(b), clock=ZERO)
            assert len(trace.search_rounds()) <= 5
            assert len(trace.rounds) <= 5
            exhausted += trace.stop_reason == "budget-exhausted"
        assert exhausted >= 150
        first = answer_question(aircon_replay.QUESTION, aircon_replay.CHOICES, aircon_replay.memories(), aircon_replay.config(), aircon_replay.backends(), clock=ZERO)
        second = answer_question(aircon_replay.QUESTION, aircon_replay.CHOICES, aircon_replay.memories(), aircon_replay.config(), aircon_replay.backends(), clock=ZERO)
        assert first.to_json() == second.to_json()
        assert first.to_json() == (FIXTURES / "aircon_trace.json").read_text()
        assert [r.action.memory for r in first.search_rounds()] == ["episodic", "episodic", "visual"]
        assert first.answer == "A"


def test_criterion_7_synthetic_end_to_end(tmp_path):
    with criterion(7, "synthetic corpus: accuracy 1.0, tIoU equals fixture value within 1e-9, pipeline < 60 s"):
        corpus = tmp_path / "corpus"
        assert main(["synth", "--out", str(corpus)]) == EXIT_OK
        expected = json.loads((corpus / "expected.json").read_text())
        assert expected["n_facts"] == 30 and expected["n_items"] == 20
        assert expected["total_ms"] == 6 * 3_600_000 and len(expected["segments"]) == 4
        t0 = time.perf_counter()
        cfg = ["--config", str(corpus / "config.json")]
        ingest = [
            "ingest", *cfg,
            "--segments", str(corpus / "segments.jsonl"),
            "--features", str(corpus / "features.jsonl"),
            "--frames", str(corpus / "frames.jsonl"),
            "--snapshot", str(tmp_path / "snap"),
        ]
        assert main(ingest) == EXIT_OK
        evaluate = ["eval", *cfg, "--snapshot", str(tmp_path / "snap"), "--evalset", str(corpus / "evalset.jsonl")]
        assert main([*evaluate, "--report-dir", str(tmp_path / "report")]) == EXIT_OK
        elapsed = time.perf_counter() - t0
        summary = json.loads((tmp_path / "report" / "report.json").read_text())["summary"]
        assert summary["n_items"] == 20 and summary["accuracy"] == 1.0
        assert abs(summary["mean_tiou"] - float(Fraction(expected["mean_tiou_exact"]))) <= 1e-9
        assert elapsed < 60, elapsed


def test_criterion_8_ablation_direction(synthetic_world):
    from vidmem.evaluation import ablation_matrix
    from vidmem.synthetic import synthetic_agent_config

    with criterion(8, "E+V > E and E+S > E, with E+S+V at least both"):
        corpus, backend, mem = synthetic_world
        reports = ablation_matrix(corpus.items, mem, ["E", "E+V", "E+S", "E+S+V"], synthetic_agent_config(), Backends(backend), clock=ZERO)
        acc = {r.mask: r.accuracy_exact for r in reports}
        assert acc["E+V"] > acc["E"] and acc["E+S"] > acc["E"]
        assert acc["E+S+V"] >= max(acc["E+V"], acc["E+S"])
        # the designated questions are answerable only with their memory
        by_cat = {r.mask: r.per_category for r in reports}
        assert by_cat["E"]["EntityLog"]["correct"] == 0 and by_cat["E+V"]["EntityLog"]["accuracy"] == 1.0
        assert by_cat["E"]["HabitInsight"]["correct"] == 0 and by_cat["E+S"]["HabitInsight"]["accuracy"] == 1.0


def test_criterion_9_persistence_round_trip(tmp_path):
    with criterion(9, "save/load identity over 100 random states; single-bit corruption always detected"):
        rng = np.random.default_rng(9)
        for seed in range(100):
            mem = random_memories(seed)
            path = tmp_path / f"s{seed}"
            digest = save(mem, path)
            back = load(path)
            assert back.episodic == mem.episodic and back.visual == mem.visual
            assert back.semantic.graph == mem.semantic.graph and back.semantic.generation == mem.semantic.generation
            assert snapshot_digest(back) == digest
            files = sorted(p for p in path.rglob("*") if p.is_file() and p.stat().st_size)
            for _ in range(3):
                f = files[int(rng.integers(len(files)))]
                data = bytearray(f.read_bytes())
                i = int(rng.integers(len(data)))
                data[i] ^= 1 << int(rng.integers(8))
                original = f.read_bytes()
                f.write_bytes(bytes(data))
                with pytest.raises(SnapshotError):
                    load(path)
                f.write_bytes(original)
            assert snapshot_digest(load(path)) == digest
