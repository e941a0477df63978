from __future__ import annotations

import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidmem.actions import Search, Stop
from vidmem.backends import (
    ConsolidationDecision,
    PromptLog,
    RecordingBackend,
    RemoteBackend,
    RemoteConfig,
    Schema,
    ScriptedBackend,
    SemanticExtraction,
    all_templates,
    complete,
    decode_vector,
    embed,
    encode_vector,
    get_template,
    parse_structured,
    serialize_structured,
)
from vidmem.backends.prompts import NER, RESPONSE_AGENT, RETRIEVAL_AGENT
from vidmem.core import FrameRef
from vidmem.errors import (
    BackendError,
    ConfigError,
    InvalidArgument,
    ParseError,
    SchemaViolation,
    TransportError,
    UnscriptedPrompt,
)

EXPECTED_SLOTS = {
    "ner": {"passage"},
    "episodic_triples": {"passage", "named_entities"},
    "coarse_caption": {"range", "captions"},
    "cross_scale_rerank": {"query", "candidates"},
    "semantic_triples": {"window", "episodic_triples"},
    "semantic_consolidation": {"new_triple", "existing_triples"},
    "retrieval_agent": {"query", "history"},
    "response_agent": {"query", "choices", "history"},
    "frame_description": {"range", "frame_count"},
}


def test_every_template_loads_with_expected_slots():
    temps = all_templates()
    assert set(temps) == set(EXPECTED_SLOTS)
    for tid, t in temps.items():
        assert t.slots == EXPECTED_SLOTS[tid], tid
        assert t.system.strip()


def test_render_rejects_missing_and_unknown_inputs():
    t = get_template(NER)
    with pytest.raises(InvalidArgument):
        t.render({})
    with pytest.raises(InvalidArgument):
        t.render({"passage": "x", "other": "y"})
    _, user = t.render({"passage": "cost $5 and $passage"})
    assert "cost $5 and $passage" in user


def test_unknown_template():
    with pytest.raises(ConfigError):
        get_template("nope")


# -- parsing -----------------------------------------------------------------


def test_parse_tolerates_prose_and_fences():
    raw = 'Sure! Here you go:\n```json\n{"named_entities": ["Alice", "Bob"]}\n```'
    assert parse_structured(raw, Schema.ENTITY_LIST) == ["Alice", "Bob"]
    assert parse_structured('["2", 0]', Schema.ID_ARRAY) == ["2", "0"]


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_structured("no json here", Schema.TRIPLE_LIST)
    with pytest.raises(SchemaViolation):
        parse_structured('{"triples": [["a", "b"]]}', Schema.TRIPLE_LIST)
    with pytest.raises(SchemaViolation):
        parse_structured('{"semantic_triples": [["a","b","c"]], "episodic_evidence": []}', Schema.SEMANTIC_TRIPLES)
    with pytest.raises(SchemaViolation):
        parse_structured('{"decision": "search", "selected_memory": {"memory_type": "tactile", "search_query": "x"}}', Schema.DECISION)


def test_decision_parsing():
    raw = '{"decision": "search", "selected_memory": {"memory_type": "Visual", "search_query": " DAY2 18:34:01-18:34:29 "}}'
    assert parse_structured(raw, Schema.DECISION) == Search("visual", "DAY2 18:34:01-18:34:29")
    assert parse_structured('{"decision": "Answer"}', Schema.DECISION) == Stop()


@pytest.mark.parametrize(
    "raw,letter",
    [("A", "A"), ("b", "B"), ("The answer is C.", "C"), ("(D) Picking up a package", "D"), ("Answer: B", "B")],
)
def test_answer_letter(raw, letter):
    assert parse_structured(raw, Schema.ANSWER_LETTER, choices="ABCD") == letter


def test_answer_letter_must_be_a_choice():
    with pytest.raises(ParseError):
        parse_structured("E", Schema.ANSWER_LETTER, choices="ABCD")
    with pytest.raises(ParseError):
        parse_structured("I cannot tell", Schema.ANSWER_LETTER, choices="ABCD")


words = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)
triples = st.lists(st.tuples(words, words, words), max_size=5)


@given(st.lists(words, max_size=6))
def test_entity_round_trip(ents):
    assert parse_structured(serialize_structured(ents, Schema.ENTITY_LIST), Schema.ENTITY_LIST) == ents


@given(triples)
def test_triple_round_trip(ts):
    assert parse_structured(serialize_structured(ts, Schema.TRIPLE_LIST), Schema.TRIPLE_LIST) == ts


@given(triples.flatmap(lambda ts: st.tuples(st.just(ts), st.lists(st.lists(st.integers(0, 9), min_size=1), min_size=len(ts), max_size=len(ts)))))
def test_semantic_round_trip(data):
    ts, ev = data
    value = SemanticExtraction(ts, ev)
    assert parse_structured(serialize_structured(value, Schema.SEMANTIC_TRIPLES), Schema.SEMANTIC_TRIPLES) == value


@given(st.one_of(st.none(), st.tuples(words, words, words)), st.lists(st.integers(0, 9)))
def test_consolidation_round_trip(updated, remove):
    value = ConsolidationDecision(updated, remove)
    assert parse_structured(serialize_structured(value, Schema.CONSOLIDATION), Schema.CONSOLIDATION) == value


@given(st.one_of(st.just(Stop()), st.builds(Search, st.sampled_from(["episodic", "semantic", "visual"]), words.filter(lambda s: s.strip() == s and s))))
def test_decision_round_trip(action):
    assert parse_structured(serialize_structured(action, Schema.DECISION), Schema.DECISION) == action


# -- scripted backend, journal, replay --------------------------------------


def test_scripted_fixture_before_handler_and_no_improvisation():
    b = ScriptedBackend(handlers={NER: lambda r: '{"named_entities": ["handler"]}'})
    b.add_fixture(NER, {"passage": "fixed"}, '{"named_entities": ["fixture"]}')
    assert complete(b, NER, {"passage": "fixed"}) == '{"named_entities": ["fixture"]}'
    assert "handler" in complete(b, NER, {"passage": "other"})
    with pytest.raises(UnscriptedPrompt):
        complete(b, RESPONSE_AGENT, {"query": "q", "choices": "A. x", "history": ""})


def test_frames_need_multimodal_backend():
    b = ScriptedBackend(handlers={RETRIEVAL_AGENT: lambda r: '{"decision": "answer"}'})
    with pytest.raises(ConfigError):
        complete(b, RETRIEVAL_AGENT, {"query": "q", "history": ""}, [FrameRef(0, "f.jpg")])


def test_frames_change_the_request_digest():
    seen = []
    b = ScriptedBackend(handlers={RETRIEVAL_AGENT: lambda r: seen.append(r.digest) or "{}"}, multimodal=True)
    complete(b, RETRIEVAL_AGENT, {"query": "q", "history": ""})
    complete(b, RETRIEVAL_AGENT, {"query": "q", "history": ""}, [FrameRef(0, "f.jpg")])
    assert seen[0] != seen[1]


def test_embed_normalizes_and_rejects_degenerate():
    b = ScriptedBackend(embed_fixtures={"z": np.zeros(4), "v": np.array([3.0, 4.0])})
    np.testing.assert_allclose(embed(b, "v"), [0.6, 0.8])
    with pytest.raises(InvalidArgument):
        embed(b, "z")
    with pytest.raises(InvalidArgument):
        embed(b, "  ")


def test_embed_aliases_share_vectors():
    b = ScriptedBackend(embed_aliases={"ac": "air conditioner"})
    np.testing.assert_array_equal(b.embed("ac"), b.embed("air conditioner"))


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), max_size=20))
def test_vector_codec_is_bit_exact(values):
    v = np.array(values, dtype=np.float64)
    assert decode_vector(encode_vector(v)).tobytes() == v.tobytes()


def test_record_then_replay(tmp_path):
    live = ScriptedBackend(handlers={NER: lambda r: json.dumps({"named_entities": r.inputs["passage"].split()})})
    rec = RecordingBackend(live)
    out1 = complete(rec, NER, {"passage": "alice meets bob"})
    v1 = rec.embed("alice")
    rec.journal.save(tmp_path / "journal.jsonl")
    replay = ScriptedBackend.from_log(tmp_path / "journal.jsonl")
    assert complete(replay, NER, {"passage": "alice meets bob"}) == out1
    assert replay.embed("alice").tobytes() == v1.tobytes()
    with pytest.raises(UnscriptedPrompt):
        complete(replay, NER, {"passage": "something new"})
    with pytest.raises(UnscriptedPrompt):
        replay.embed("bob")


def test_fixture_file(tmp_path):
    path = tmp_path / "fx.jsonl"
    path.write_text(
        "# comment\n"
        + json.dumps({"template": "ner", "inputs": {"passage": "p"}, "response": '{"named_entities": ["p"]}'})
        + "\n"
        + json.dumps({"embed": "p", "vector": [1, 0]})
        + "\n"
    )
    b = ScriptedBackend.from_fixture_file(path)
    assert complete(b, NER, {"passage": "p"}) == '{"named_entities": ["p"]}'
    assert b.embed("p").tolist() == [1.0, 0.0]


def test_prompt_log_records_in_order():
    log = PromptLog()
    b = ScriptedBackend(handlers={NER: lambda r: "{}"})
    complete(b, NER, {"passage": "a"}, journal=log)
    complete(b, NER, {"passage": "b"}, journal=log)
    assert [e["inputs"]["passage"] for e in log.entries] == ["a", "b"]


# -- remote backend against a mock transport --------------------------------


def _remote(handler, **cfg):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteBackend(RemoteConfig(endpoint="http://model.test/v1", model="m", backoff_s=0.0, **cfg), client)


def test_remote_chat_and_embed():
    def handler(request):
        body = json.loads(request.content)
        if request.url.path.endswith("/chat/completions"):
            assert body["messages"][0]["role"] == "system"
            return httpx.Response(200, json={"choices": [{"message": {"content": '{"named_entities": []}'}}]})
        return httpx.Response(200, json={"data": [{"embedding": [1.0, 2.0]}]})

    b = _remote(handler)
    assert complete(b, NER, {"passage": "x"}) == '{"named_entities": []}'
    assert b.embed("x").tolist() == [1.0, 2.0]


def test_remote_sends_frames_as_image_parts(tmp_path):
    img = tmp_path / "f.jpg"
    img.write_bytes(b"\xff\xd8jpeg")
    captured = {}

    def handler(request):
        captured.update(json.loads(request.content))
        return httpx.Response(200, json={"choices": [{"message": {"content": "A"}}]})

    b = _remote(handler)
    complete(b, RESPONSE_AGENT, {"query": "q", "choices": "A. x", "history": ""}, [FrameRef(0, str(img))])
    parts = captured["messages"][1]["content"]
    assert parts[0]["type"] == "text"
    assert parts[1]["image_url"]["url"].startswith("data:image/jpeg;base64,")


def test_remote_retries_then_fails():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503, text="busy")

    with pytest.raises(TransportError):
        _remote(handler, retries=2).embed("x")
    assert len(calls) == 3


def test_remote_client_errors_are_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad")

    with pytest.raises(BackendError):
        _remote(handler).embed("x")
    assert len(calls) == 1


def test_remote_config_from_env(monkeypatch):
    monkeypatch.delenv("VIDMEM_ENDPOINT", raising=False)
    with pytest.raises(ConfigError):
        RemoteConfig.from_env()
    monkeypatch.setenv("VIDMEM_ENDPOINT", "http://x")
    monkeypatch.setenv("VIDMEM_MODEL", "m")
    assert RemoteConfig.from_env().model == "m"
