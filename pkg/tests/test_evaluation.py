from __future__ import annotations

import csv
import json
from fractions import Fraction

import pytest

from vidmem.actions import Search, Stop
from vidmem.agent import AgentConfig, AgentTrace, Backends, CaptionEvidence, RetrievalRound
from vidmem.core import TimeRange
from vidmem.errors import ConfigError, InputError, InvalidArgument
from vidmem.evaluation import (
    ABLATION_MASKS,
    EvalItem,
    ItemResult,
    ablation_matrix,
    fold_report,
    format_summary,
    load_items,
    run_eval,
    write_ablation,
    write_report,
)
from vidmem.synthetic import synthetic_agent_config

ZERO = lambda: 0.0  # noqa: E731
CHOICES = {"A": "yes", "B": "no"}


def _trace(answer, *rounds):
    """rounds: lists of (start, end) retrieved per search round"""
    rs = []
    for i, ranges in enumerate(rounds, 1):
        ev = [CaptionEvidence(f"s{a}", TimeRange(a, b), 1, "c") for a, b in ranges]
        rs.append(RetrievalRound(i, Search("episodic", "q"), ev))
    rs.append(RetrievalRound(len(rs) + 1, Stop()))
    t = AgentTrace("q", rs, choices=CHOICES)
    t.answer = answer
    return t


def test_fold_report_is_exact():
    items = [
        EvalItem("a", "q", CHOICES, "A", (TimeRange(0, 30),), "x"),
        EvalItem("b", "q", CHOICES, "A", (TimeRange(0, 10),), "x"),
        EvalItem("c", "q", CHOICES, "B", (), "y"),
    ]
    results = [
        ItemResult(items[2], _trace("A")),
        ItemResult(items[0], _trace("A", [(15, 45)])),
        ItemResult(items[1], _trace("A", [(0, 5)], [(20, 30)])),
    ]
    rep = fold_report(results, AgentConfig())
    assert [r.item.id for r in rep.results] == ["a", "b", "c"]
    assert rep.accuracy_exact == Fraction(2, 3)
    # union over rounds for "b": [0,5) and [20,30) against [0,10) -> 5/20
    assert rep.mean_tiou_exact == (Fraction(1, 3) + Fraction(1, 4)) / 2 == Fraction(7, 24)
    # last round only for "b": [20,30) against [0,10) -> 0
    assert rep.mean_tiou_last_round_exact == Fraction(1, 6)
    assert rep.n_tiou_items == 2
    assert rep.per_category == {"x": {"correct": 2, "total": 2, "accuracy": 1.0}, "y": {"correct": 0, "total": 1, "accuracy": 0.0}}
    assert rep.usage_counts == {"episodic": 3}
    assert rep.usage_proportions == {"episodic": 1.0, "semantic": 0.0, "visual": 0.0}


def test_fold_is_order_independent():
    items = [EvalItem(str(i), "q", CHOICES, "A") for i in range(5)]
    results = [ItemResult(it, _trace("AB"[i % 2])) for i, it in enumerate(items)]
    a = fold_report(results, AgentConfig())
    b = fold_report(results[::-1], AgentConfig())
    assert a.summary() == b.summary()


def test_failed_items_count_as_wrong():
    it = EvalItem("a", "q", CHOICES, "A", (TimeRange(0, 10),))
    rep = fold_report([ItemResult(it, None, "BackendError: down")], AgentConfig())
    assert rep.accuracy_exact == 0 and rep.mean_tiou_exact == 0
    assert rep.results[0].flags() == ["error"]


def test_eval_item_validation():
    with pytest.raises(InvalidArgument):
        EvalItem("a", "q", CHOICES, "C")
    with pytest.raises(InvalidArgument):
        EvalItem("", "q", CHOICES, "A")
    rec = EvalItem("a", "q", CHOICES, "A", (TimeRange(1, 2),), "k").to_record()
    assert EvalItem.from_record(json.loads(json.dumps(rec))) == EvalItem("a", "q", CHOICES, "A", (TimeRange(1, 2),), "k")


def test_load_items_rejects_duplicates_and_bad_rows(tmp_path):
    p = tmp_path / "items.jsonl"
    row = EvalItem("a", "q", CHOICES, "A").to_record()
    p.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(InputError, match="duplicate"):
        load_items(p)
    p.write_text(json.dumps({"id": "x"}) + "\n")
    with pytest.raises(InputError, match=":1:"):
        load_items(p)


# -- synthetic corpus --------------------------------------------------------


def test_synthetic_run_is_perfect_and_matches_expected_tiou(synthetic_world):
    corpus, backend, mem = synthetic_world
    rep = run_eval(corpus.items, mem, synthetic_agent_config(), Backends(backend), clock=ZERO)
    assert rep.accuracy_exact == 1
    assert rep.mean_tiou_exact == Fraction(corpus.expected["mean_tiou_exact"])
    assert "accuracy 1.0000 (20/20)" in format_summary(rep)


def test_parallel_and_serial_runs_agree(synthetic_world):
    corpus, backend, mem = synthetic_world
    cfg = synthetic_agent_config()
    serial = run_eval(corpus.items, mem, cfg, Backends(backend), clock=ZERO)
    parallel = run_eval(corpus.items, mem, cfg, Backends(backend), parallelism=4, clock=ZERO)
    assert parallel.summary() == serial.summary()
    assert [r.trace.to_json() for r in parallel.results] == [r.trace.to_json() for r in serial.results]


def test_ablation_matches_expected(synthetic_world):
    corpus, backend, mem = synthetic_world
    masks = ["E", "E+S", "E+V", "E+S+V"]
    reports = ablation_matrix(corpus.items, mem, masks, synthetic_agent_config(), Backends(backend), clock=ZERO)
    got = {r.mask: r.accuracy for r in reports}
    assert got == corpus.expected["accuracy_by_mask"]
    assert reports[0].usage_proportions["semantic"] == 0.0


def test_ablation_mask_validation(synthetic_world):
    corpus, backend, mem = synthetic_world
    assert "S" not in ABLATION_MASKS
    with pytest.raises(ConfigError):
        ablation_matrix(corpus.items, mem, ["S"], AgentConfig(), Backends(backend))
    with pytest.raises(ConfigError):
        run_eval(corpus.items, type(mem)(mem.episodic), AgentConfig(), Backends(backend))


def test_report_files(tmp_path, synthetic_world):
    corpus, backend, mem = synthetic_world
    items = corpus.items[:4]
    rep = run_eval(items, mem, synthetic_agent_config(), Backends(backend), clock=ZERO)
    out = write_report(rep, tmp_path / "r")
    doc = json.loads((out / "report.json").read_text())
    assert doc["summary"]["n_items"] == 4 and len(doc["items"]) == 4
    for row in doc["items"]:
        trace = AgentTrace.from_json((out / row["trace"]).read_text())
        assert trace.answer == row["predicted"]
    with open(out / "items.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["id"] for r in rows] == sorted(it.id for it in items)
    assert (out / "usage.csv").exists() and (out / "categories.csv").exists()


def test_ablation_files(tmp_path, synthetic_world):
    corpus, backend, mem = synthetic_world
    reports = ablation_matrix(corpus.items[:3], mem, ["E", "E+V"], synthetic_agent_config(), Backends(backend), clock=ZERO)
    out = write_ablation(reports, tmp_path / "abl")
    with open(out / "ablation.csv") as fh:
        assert [r["mask"] for r in csv.DictReader(fh)] == ["E", "E+V"]
    assert (out / "EV" / "report.json").exists()
