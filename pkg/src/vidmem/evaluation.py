"""Multiple-choice evaluation over agent traces.

A report is a pure fold over per-item traces. Accuracy, temporal IoU and
memory usage are all recomputed from the traces, so a saved report can be
checked against its trace files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ._jsonio import digest, iter_jsonl
from .actions import MEMORY_KINDS, format_mask, parse_mask
from .agent import AgentConfig, AgentTrace, Backends, Clock, Memories, answer_question
from .core import TimeRange, tiou_fraction
from .errors import ConfigError, InputError, InvalidArgument

log = logging.getLogger(__name__)

ABLATION_MASKS = ("E", "V", "E+S", "E+V", "E+S+V")


@dataclass(frozen=True)
class EvalItem:
    id: str
    question: str
    choices: dict[str, str]
    answer: str
    gold_ranges: tuple[TimeRange, ...] = ()
    category: str = "uncategorized"

    def __post_init__(self):
        if not self.id:
            raise InvalidArgument("eval item id must be non-empty")
        if not self.choices:
            raise InvalidArgument(f"item {self.id}: no choices")
        if self.answer not in self.choices:
            raise InvalidArgument(f"item {self.id}: gold letter {self.answer!r} is not a choice")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "choices": dict(self.choices),
            "answer": self.answer,
            "gold_ranges": [r.to_list() for r in self.gold_ranges],
            "category": self.category,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> EvalItem:
        return cls(
            id=str(rec["id"]),
            question=rec["question"],
            choices={str(k).upper(): str(v) for k, v in rec["choices"].items()},
            answer=str(rec["answer"]).upper(),
            gold_ranges=tuple(TimeRange.coerce(r) for r in rec.get("gold_ranges") or ()),
            category=rec.get("category") or "uncategorized",
        )


def load_items(path: str | Path) -> list[EvalItem]:
    items = []
    for lineno, rec in iter_jsonl(path):
        try:
            items.append(EvalItem.from_record(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: bad eval item ({exc})") from None
    ids = [i.id for i in items]
    dupes = sorted({x for x in ids if ids.count(x) > 1})
    if dupes:
        raise InputError(f"{path}: duplicate item ids {dupes[:5]}")
    return items


@dataclass
class ItemResult:
    item: EvalItem
    trace: AgentTrace | None
    error: str | None = None

    @property
    def predicted(self) -> str | None:
        return self.trace.answer if self.trace is not None else None

    @property
    def correct(self) -> bool:
        return self.error is None and self.predicted == self.item.answer

    def tiou(self, last_only: bool = False) -> Fraction | None:
        if not self.item.gold_ranges:
            return None
        ranges = self.trace.evidence_ranges(last_only) if self.trace is not None else []
        return tiou_fraction(ranges, self.item.gold_ranges)

    def usage(self) -> Counter:
        return self.trace.usage() if self.trace is not None else Counter()

    def flags(self) -> list[str]:
        out = list(self.trace.flags) if self.trace is not None else []
        if self.trace is not None and self.trace.degraded:
            out.append("degraded-decision")
        if self.error is not None:
            out.append("error")
        return out


def _mean(values: Sequence[Fraction]) -> Fraction | None:
    return sum(values, Fraction(0)) / len(values) if values else None


@dataclass
class EvalReport:
    mask: str
    config_fingerprint: str
    results: list[ItemResult]
    n_items: int = 0
    n_correct: int = 0
    accuracy_exact: Fraction = Fraction(0)
    per_category: dict[str, dict] = field(default_factory=dict)
    mean_tiou_exact: Fraction | None = None
    mean_tiou_last_round_exact: Fraction | None = None
    n_tiou_items: int = 0
    usage_counts: dict[str, int] = field(default_factory=dict)
    trace_digest: str = ""

    @property
    def accuracy(self) -> float:
        return float(self.accuracy_exact)

    @property
    def mean_tiou(self) -> float | None:
        return None if self.mean_tiou_exact is None else float(self.mean_tiou_exact)

    @property
    def mean_tiou_last_round(self) -> float | None:
        return None if self.mean_tiou_last_round_exact is None else float(self.mean_tiou_last_round_exact)

    @property
    def usage_proportions(self) -> dict[str, float]:
        total = sum(self.usage_counts.values())
        return {k: (self.usage_counts.get(k, 0) / total if total else 0.0) for k in MEMORY_KINDS}

    def summary(self) -> dict:
        return {
            "mask": self.mask,
            "config_fingerprint": self.config_fingerprint,
            "n_items": self.n_items,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "per_category": self.per_category,
            "mean_tiou": self.mean_tiou,
            "mean_tiou_exact": None if self.mean_tiou_exact is None else str(self.mean_tiou_exact),
            "mean_tiou_last_round": self.mean_tiou_last_round,
            "n_tiou_items": self.n_tiou_items,
            "usage_counts": {k: self.usage_counts.get(k, 0) for k in MEMORY_KINDS},
            "usage_proportions": self.usage_proportions,
            "trace_digest": self.trace_digest,
        }


def fold_report(results: Iterable[ItemResult], config: AgentConfig) -> EvalReport:
    """Aggregate per-item results (sorted by item id) into a report."""
    results = sorted(results, key=lambda r: r.item.id)
    cats: dict[str, list[int]] = {}
    tious, tious_last = [], []
    usage: Counter = Counter()
    for r in results:
        c = cats.setdefault(r.item.category, [0, 0])
        c[0] += int(r.correct)
        c[1] += 1
        t = r.tiou()
        if t is not None:
            tious.append(t)
            tious_last.append(r.tiou(last_only=True))
        usage.update(r.usage())
    n_correct = sum(int(r.correct) for r in results)
    per_category = {
        k: {"correct": v[0], "total": v[1], "accuracy": v[0] / v[1]} for k, v in sorted(cats.items())
    }
    trace_digest = digest(
        [[r.item.id, r.trace.digest if r.trace is not None else None, r.error] for r in results]
    )
    return EvalReport(
        mask=format_mask(config.enabled),
        config_fingerprint=config.fingerprint(),
        results=results,
        n_items=len(results),
        n_correct=n_correct,
        accuracy_exact=Fraction(n_correct, len(results)) if results else Fraction(0),
        per_category=per_category,
        mean_tiou_exact=_mean(tious),
        mean_tiou_last_round_exact=_mean(tious_last),
        n_tiou_items=len(tious),
        usage_counts=dict(usage),
        trace_digest=trace_digest,
    )


def _evaluate_item(item: EvalItem, memories, config, backends, clock) -> ItemResult:
    try:
        trace = answer_question(item.question, item.choices, memories, config, backends, clock=clock)
    except Exception as exc:  # one bad item must not sink the batch
        log.warning("item %s failed: %s", item.id, exc)
        return ItemResult(item, None, f"{type(exc).__name__}: {exc}")
    return ItemResult(item, trace)


def run_eval(
    items: Sequence[EvalItem],
    memories: Memories,
    config: AgentConfig,
    backends: Backends,
    *,
    parallelism: int = 1,
    clock: Clock | None = None,
) -> EvalReport:
    missing = config.enabled - memories.available()
    if missing:
        raise ConfigError(f"enabled memories not built: {sorted(missing)}")
    if parallelism <= 1:
        results = [_evaluate_item(it, memories, config, backends, clock) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(lambda it: _evaluate_item(it, memories, config, backends, clock), items))
    return fold_report(results, config)


def normalize_mask(mask: str) -> str:
    return format_mask(parse_mask(mask))


def ablation_matrix(
    items: Sequence[EvalItem],
    memories: Memories,
    masks: Sequence[str],
    config: AgentConfig,
    backends: Backends,
    *,
    parallelism: int = 1,
    clock: Clock | None = None,
) -> list[EvalReport]:
    """One report per enable-mask over the same items and memories."""
    normalized = [normalize_mask(m) for m in masks]
    bad = [m for m in normalized if m not in ABLATION_MASKS]
    if bad:
        raise ConfigError(f"ablation masks must be among {ABLATION_MASKS}, got {bad}")
    for m in normalized:
        missing = parse_mask(m) - memories.available()
        if missing:
            raise ConfigError(f"mask {m} needs unbuilt memories {sorted(missing)}")
    return [
        run_eval(
            items,
            memories,
            dataclasses.replace(config, enabled=parse_mask(m)),
            backends,
            parallelism=parallelism,
            clock=clock,
        )
        for m in normalized
    ]


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def _fmt(x: Fraction | None) -> str:
    return "" if x is None else repr(float(x))


def write_report(report: EvalReport, directory: str | Path) -> Path:
    """Write ``report.json``, CSV tables and one trace file per item."""
    out = Path(directory)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    items = []
    for r in report.results:
        fname = f"traces/{_UNSAFE.sub('_', r.item.id)}.json"
        if r.trace is not None:
            (out / fname).write_text(r.trace.to_json(), encoding="utf-8")
        t, tl = r.tiou(), r.tiou(last_only=True)
        items.append(
            {
                "id": r.item.id,
                "category": r.item.category,
                "gold": r.item.answer,
                "predicted": r.predicted,
                "correct": r.correct,
                "tiou": None if t is None else float(t),
                "tiou_last_round": None if tl is None else float(tl),
                "usage": {k: r.usage().get(k, 0) for k in MEMORY_KINDS},
                "flags": r.flags(),
                "error": r.error,
                "trace": fname if r.trace is not None else None,
            }
        )
    doc = {"summary": report.summary(), "items": items}
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with open(out / "items.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "category", "gold", "predicted", "correct", "tiou", "tiou_last_round", *MEMORY_KINDS, "flags"])
        for r, rec in zip(report.results, items):
            w.writerow(
                [
                    rec["id"],
                    rec["category"],
                    rec["gold"],
                    rec["predicted"] or "",
                    int(rec["correct"]),
                    _fmt(r.tiou()),
                    _fmt(r.tiou(last_only=True)),
                    *(rec["usage"][k] for k in MEMORY_KINDS),
                    ";".join(rec["flags"]),
                ]
            )
    with open(out / "categories.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["category", "correct", "total", "accuracy"])
        for cat, v in report.per_category.items():
            w.writerow([cat, v["correct"], v["total"], repr(v["accuracy"])])
    with open(out / "usage.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["memory", "count", "proportion"])
        for k in MEMORY_KINDS:
            w.writerow([k, report.usage_counts.get(k, 0), repr(report.usage_proportions[k])])
    return out


def write_ablation(reports: Sequence[EvalReport], directory: str | Path) -> Path:
    """Per-mask report directories plus one comparison table."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mask", "accuracy", "mean_tiou", *(f"usage_{k}" for k in MEMORY_KINDS), "config_fingerprint"])
        for rep in reports:
            write_report(rep, out / rep.mask.replace("+", ""))
            w.writerow(
                [
                    rep.mask,
                    repr(rep.accuracy),
                    _fmt(rep.mean_tiou_exact),
                    *(repr(rep.usage_proportions[k]) for k in MEMORY_KINDS),
                    rep.config_fingerprint,
                ]
            )
    return out


def format_summary(report: EvalReport) -> str:
    lines = [
        f"mask {report.mask}  items {report.n_items}  accuracy {report.accuracy:.4f} ({report.n_correct}/{report.n_items})",
        f"mean tIoU {report.mean_tiou if report.mean_tiou is not None else 'n/a'}"
        f" over {report.n_tiou_items} items (last round only: {report.mean_tiou_last_round if report.mean_tiou_last_round is not None else 'n/a'})",
        "usage " + "  ".join(f"{k} {v:.3f}" for k, v in report.usage_proportions.items()),
    ]
    for cat, v in report.per_category.items():
        lines.append(f"  {cat:<20} {v['correct']}/{v['total']}  {v['accuracy']:.4f}")
    lines.append(f"config {report.config_fingerprint[:16]}  traces {report.trace_digest[:16]}")
    return "\n".join(lines)
