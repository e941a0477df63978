"""Tolerant extraction of structured payloads from model output."""

from __future__ import annotations

import enum
import json
import re
from typing import Any, NamedTuple, Sequence

from ..actions import MEMORY_KINDS, Search, Stop
from ..errors import InvalidArgument, ParseError, SchemaViolation


class Schema(enum.Enum):
    FREE_TEXT = "free_text"
    ENTITY_LIST = "entity_list"
    TRIPLE_LIST = "triple_list"
    ID_ARRAY = "id_array"
    SEMANTIC_TRIPLES = "semantic_triples"
    CONSOLIDATION = "consolidation"
    DECISION = "decision"
    ANSWER_LETTER = "answer_letter"


class SemanticExtraction(NamedTuple):
    triples: list[tuple[str, str, str]]
    evidence: list[list[int]]


class ConsolidationDecision(NamedTuple):
    updated: tuple[str, str, str] | None
    remove: list[int]


_CONTAINERS = {
    Schema.ENTITY_LIST: (dict, list),
    Schema.TRIPLE_LIST: (dict, list),
    Schema.ID_ARRAY: (list,),
    Schema.SEMANTIC_TRIPLES: (dict,),
    Schema.CONSOLIDATION: (dict,),
    Schema.DECISION: (dict,),
}

_decoder = json.JSONDecoder()


def find_json(raw: str, kinds: tuple[type, ...] = (dict, list)) -> Any:
    """Return the first JSON object/array embedded in ``raw`` of an allowed type."""
    for i, ch in enumerate(raw):
        if ch not in "{[":
            continue
        try:
            value, _ = _decoder.raw_decode(raw, i)
        except json.JSONDecodeError:
            continue
        if isinstance(value, kinds):
            return value
    raise ParseError("no structured payload found", raw)


def _triple(item, raw: str, where: str) -> tuple[str, str, str]:
    if not isinstance(item, (list, tuple)) or len(item) != 3 or not all(isinstance(x, str) for x in item):
        raise SchemaViolation(f"{where}: expected [subject, predicate, object], got {item!r}", raw)
    return (item[0], item[1], item[2])


def _int_list(item, raw: str, where: str) -> list[int]:
    if not isinstance(item, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in item):
        raise SchemaViolation(f"{where}: expected a list of integers, got {item!r}", raw)
    return list(item)


def _entities(value, raw):
    if isinstance(value, dict):
        if "named_entities" not in value:
            raise SchemaViolation("missing 'named_entities'", raw)
        value = value["named_entities"]
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise SchemaViolation("named_entities must be a list of strings", raw)
    return list(value)


def _triples(value, raw):
    if isinstance(value, dict):
        if "triples" not in value:
            raise SchemaViolation("missing 'triples'", raw)
        value = value["triples"]
    if not isinstance(value, list):
        raise SchemaViolation("triples must be a list", raw)
    return [_triple(t, raw, f"triples[{i}]") for i, t in enumerate(value)]


def _ids(value, raw):
    out = []
    for x in value:
        if isinstance(x, bool) or not isinstance(x, (int, str)):
            raise SchemaViolation(f"caption ids must be strings or integers, got {x!r}", raw)
        out.append(str(x))
    return out


def _semantic(value, raw):
    try:
        triples, evidence = value["semantic_triples"], value["episodic_evidence"]
    except KeyError as exc:
        raise SchemaViolation(f"missing key {exc.args[0]!r}", raw) from None
    if not isinstance(triples, list) or not isinstance(evidence, list):
        raise SchemaViolation("semantic_triples and episodic_evidence must be lists", raw)
    if len(triples) != len(evidence):
        raise SchemaViolation(
            f"semantic_triples ({len(triples)}) and episodic_evidence ({len(evidence)}) differ in length", raw
        )
    return SemanticExtraction(
        [_triple(t, raw, f"semantic_triples[{i}]") for i, t in enumerate(triples)],
        [_int_list(e, raw, f"episodic_evidence[{i}]") for i, e in enumerate(evidence)],
    )


def _consolidation(value, raw):
    if "updated_triple" not in value or "triples_to_remove" not in value:
        raise SchemaViolation("expected keys 'updated_triple' and 'triples_to_remove'", raw)
    upd = value["updated_triple"]
    updated = None if upd in (None, []) else _triple(upd, raw, "updated_triple")
    return ConsolidationDecision(updated, _int_list(value["triples_to_remove"], raw, "triples_to_remove"))


def _decision(value, raw):
    decision = str(value.get("decision", "")).strip().lower()
    if decision == "answer":
        return Stop()
    if decision != "search":
        raise SchemaViolation(f"decision must be 'search' or 'answer', got {value.get('decision')!r}", raw)
    sel = value.get("selected_memory")
    if not isinstance(sel, dict):
        raise SchemaViolation("search decision without 'selected_memory'", raw)
    kind = str(sel.get("memory_type", "")).strip().lower()
    query = sel.get("search_query")
    if kind not in MEMORY_KINDS:
        raise SchemaViolation(f"unknown memory_type {sel.get('memory_type')!r}", raw)
    if not isinstance(query, str) or not query.strip():
        raise SchemaViolation("search_query must be a non-empty string", raw)
    return Search(kind, query.strip())


_LETTER_PATTERNS = (
    re.compile(r"answer\s*(?:is|:)?\s*\(?([A-Z])\)?(?![A-Za-z])", re.IGNORECASE),
    re.compile(r"^\s*\(?([A-Z])[\).:]"),
    re.compile(r"\(([A-Z])\)"),
    re.compile(r"(?<![A-Za-z])([A-Z])(?![A-Za-z])"),
)


def _letter(raw: str, choices: Sequence[str] | None) -> str:
    valid = {c.upper() for c in choices} if choices else None
    text = raw.strip()
    if len(text) == 1 and text.isalpha() and (valid is None or text.upper() in valid):
        return text.upper()
    for pat in _LETTER_PATTERNS:
        for m in pat.finditer(text):
            letter = m.group(1).upper()
            if valid is None or letter in valid:
                return letter
    raise ParseError("no answer letter found", raw)


_VALIDATORS = {
    Schema.ENTITY_LIST: _entities,
    Schema.TRIPLE_LIST: _triples,
    Schema.ID_ARRAY: _ids,
    Schema.SEMANTIC_TRIPLES: _semantic,
    Schema.CONSOLIDATION: _consolidation,
    Schema.DECISION: _decision,
}


def parse_structured(raw: str, schema: Schema, *, choices: Sequence[str] | None = None):
    """Extract a typed value for ``schema`` from free-form model output.

    Raises ``ParseError`` when nothing parsable is present and
    ``SchemaViolation`` when a payload is found but has the wrong shape.
    """
    if schema is Schema.FREE_TEXT:
        return raw.strip()
    if schema is Schema.ANSWER_LETTER:
        return _letter(raw, choices)
    value = find_json(raw, _CONTAINERS[schema])
    return _VALIDATORS[schema](value, raw)


def serialize_structured(value, schema: Schema) -> str:
    """Inverse of :func:`parse_structured` (used by scripted backends and tests)."""
    if schema in (Schema.FREE_TEXT, Schema.ANSWER_LETTER):
        return str(value)
    if schema is Schema.ENTITY_LIST:
        payload = {"named_entities": list(value)}
    elif schema is Schema.TRIPLE_LIST:
        payload = {"triples": [list(t) for t in value]}
    elif schema is Schema.ID_ARRAY:
        payload = [str(x) for x in value]
    elif schema is Schema.SEMANTIC_TRIPLES:
        payload = {"semantic_triples": [list(t) for t in value.triples], "episodic_evidence": value.evidence}
    elif schema is Schema.CONSOLIDATION:
        payload = {
            "updated_triple": list(value.updated) if value.updated else [],
            "triples_to_remove": list(value.remove),
        }
    elif schema is Schema.DECISION:
        if isinstance(value, Stop):
            payload = {"decision": "answer"}
        else:
            payload = {
                "decision": "search",
                "selected_memory": {"memory_type": value.memory, "search_query": value.query},
            }
    else:
        raise InvalidArgument(f"unsupported schema {schema}")
    return json.dumps(payload, ensure_ascii=False)
