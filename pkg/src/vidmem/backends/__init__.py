"""Model backends: the boundary between the engine and any LLM / encoder."""

from .base import (
    ChatRequest,
    ModelBackend,
    PromptLog,
    RecordingBackend,
    complete,
    decode_vector,
    embed,
    encode_vector,
    request_digest,
)
from .parsing import ConsolidationDecision, Schema, SemanticExtraction, parse_structured, serialize_structured
from .prompts import PromptTemplate, all_templates, get_template
from .remote import RemoteBackend, RemoteConfig
from .scripted import ScriptedBackend, hash_embedding

__all__ = [
    "ChatRequest",
    "ConsolidationDecision",
    "ModelBackend",
    "PromptLog",
    "PromptTemplate",
    "RecordingBackend",
    "RemoteBackend",
    "RemoteConfig",
    "Schema",
    "ScriptedBackend",
    "SemanticExtraction",
    "all_templates",
    "complete",
    "decode_vector",
    "embed",
    "encode_vector",
    "get_template",
    "hash_embedding",
    "parse_structured",
    "request_digest",
    "serialize_structured",
]
