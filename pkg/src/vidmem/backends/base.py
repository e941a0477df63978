"""Model backend contract, prompt dispatch and the prompt journal."""

from __future__ import annotations

import base64
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from ..core import FrameRef
from .._jsonio import digest, iter_jsonl, write_jsonl
from ..errors import ConfigError, InvalidArgument
from .prompts import PromptTemplate, get_template

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    system: str
    user: str
    inputs: Mapping[str, str]
    frames: tuple[FrameRef, ...] = ()

    @property
    def digest(self) -> str:
        return request_digest(self.template_id, self.inputs, self.frames)


def request_digest(template_id: str, inputs: Mapping[str, str], frames: Sequence = ()) -> str:
    return digest(
        {
            "template": template_id,
            "inputs": {k: str(v) for k, v in inputs.items()},
            "frames": [[f.timestamp_ms, f.locator] for f in frames],
        }
    )


@runtime_checkable
class ModelBackend(Protocol):
    name: str
    multimodal: bool

    def chat(self, request: ChatRequest) -> str: ...

    def embed(self, text: str) -> np.ndarray: ...


@dataclass
class PromptLog:
    """Append-only journal of every chat dispatch and embedding call."""

    entries: list[dict] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record_chat(self, request: ChatRequest, response: str) -> None:
        entry = {
            "kind": "chat",
            "template": request.template_id,
            "digest": request.digest,
            "inputs": dict(request.inputs),
            "frames": [[f.timestamp_ms, f.locator] for f in request.frames],
            "response": response,
        }
        with self._lock:
            self.entries.append(entry)

    def record_embed(self, text: str, vector: np.ndarray) -> None:
        entry = {"kind": "embed", "text": text, "vector_b64": encode_vector(vector)}
        with self._lock:
            self.entries.append(entry)

    def save(self, path: str | Path) -> None:
        write_jsonl(path, self.entries)

    @classmethod
    def load(cls, path: str | Path) -> PromptLog:
        return cls([rec for _, rec in iter_jsonl(path)])


def encode_vector(vec: np.ndarray) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f8").tobytes()).decode("ascii")


def decode_vector(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def complete(
    backend: ModelBackend,
    template: PromptTemplate | str,
    inputs: Mapping[str, str],
    frames: Sequence[FrameRef] | None = None,
    *,
    journal: PromptLog | None = None,
) -> str:
    """Fill ``template`` and dispatch it; returns the raw response text."""
    if isinstance(template, str):
        template = get_template(template)
    frames = tuple(frames or ())
    if frames and not getattr(backend, "multimodal", False):
        raise ConfigError(f"backend {backend.name!r} cannot accept frames")
    system, user = template.render(inputs)
    request = ChatRequest(template.id, system, user, dict(inputs), frames)
    response = backend.chat(request)
    log.debug("prompt %s %s -> %d chars", template.id, request.digest[:12], len(response))
    if journal is not None:
        journal.record_chat(request, response)
    return response


def embed(backend: ModelBackend, text: str) -> np.ndarray:
    """Unit-norm embedding of non-empty ``text``."""
    if not isinstance(text, str) or not text.strip():
        raise InvalidArgument("cannot embed empty text")
    vec = np.asarray(backend.embed(text), dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidArgument(f"backend {backend.name!r} returned a degenerate embedding")
    return vec / norm


class RecordingBackend:
    """Wraps a backend and journals every call it serves."""

    def __init__(self, inner: ModelBackend, journal: PromptLog | None = None):
        self.inner = inner
        self.journal = journal if journal is not None else PromptLog()
        self.name = f"recording({inner.name})"
        self.multimodal = inner.multimodal

    def chat(self, request: ChatRequest) -> str:
        response = self.inner.chat(request)
        self.journal.record_chat(request, response)
        return response

    def embed(self, text: str) -> np.ndarray:
        vec = np.asarray(self.inner.embed(text), dtype=np.float64)
        self.journal.record_embed(text, vec)
        return vec
