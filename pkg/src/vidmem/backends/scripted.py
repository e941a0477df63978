"""Deterministic fixture-driven backend for tests, replay and offline runs.

Lookup order for a chat request:

1. a fixture keyed by ``(template id, request digest)``;
2. a handler registered for the template id (a pure function of the request);
3. otherwise :class:`UnscriptedPrompt` is raised. Nothing is improvised.

Fixture files are JSON lines. Each line is one of::

    {"template": "ner", "inputs": {"passage": "..."}, "response": "..."}
    {"template": "ner", "digest": "<sha256>", "response": "..."}
    {"embed": "some text", "vector": [0.1, 0.2, ...]}

``inputs`` lines are hashed at load time exactly as live requests are.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .._jsonio import iter_jsonl
from ..errors import InputError, UnscriptedPrompt
from .base import ChatRequest, PromptLog, decode_vector, request_digest

Handler = Callable[[ChatRequest], str]

DEFAULT_EMBED_DIM = 64


def hash_embedding(text: str, dim: int = DEFAULT_EMBED_DIM, seed: int = 0) -> np.ndarray:
    """Map text to a point on the unit sphere, seeded by its SHA-256."""
    h = hashlib.sha256(f"{seed}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(h, "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class ScriptedBackend:
    def __init__(
        self,
        fixtures: Mapping[tuple[str, str], str] | None = None,
        handlers: Mapping[str, Handler] | None = None,
        *,
        embed_dim: int = DEFAULT_EMBED_DIM,
        seed: int = 0,
        embedder: Callable[[str], np.ndarray] | None = None,
        embed_aliases: Mapping[str, str] | None = None,
        embed_fixtures: Mapping[str, np.ndarray] | None = None,
        multimodal: bool = False,
        strict_embed: bool = False,
        name: str = "scripted",
    ):
        self.fixtures: dict[tuple[str, str], str] = dict(fixtures or {})
        self.handlers: dict[str, Handler] = dict(handlers or {})
        self.embed_dim = embed_dim
        self.seed = seed
        self.embedder = embedder
        self.embed_aliases = dict(embed_aliases or {})
        self.embed_fixtures = {k: np.asarray(v, dtype=np.float64) for k, v in (embed_fixtures or {}).items()}
        self.multimodal = multimodal
        self.strict_embed = strict_embed
        self.name = name

    def add_fixture(self, template_id: str, inputs: Mapping[str, str], response: str, frames: Iterable = ()) -> None:
        self.fixtures[(template_id, request_digest(template_id, inputs, tuple(frames)))] = response

    def chat(self, request: ChatRequest) -> str:
        hit = self.fixtures.get((request.template_id, request.digest))
        if hit is not None:
            return hit
        handler = self.handlers.get(request.template_id)
        if handler is not None:
            return handler(request)
        raise UnscriptedPrompt(
            f"no fixture or handler for template {request.template_id!r} (digest {request.digest[:16]})"
        )

    def embed(self, text: str) -> np.ndarray:
        fixed = self.embed_fixtures.get(text)
        if fixed is not None:
            return fixed
        if self.strict_embed:
            raise UnscriptedPrompt(f"no embedding fixture for {text[:60]!r}")
        text = self.embed_aliases.get(text, text)
        if self.embedder is not None:
            return np.asarray(self.embedder(text), dtype=np.float64)
        return hash_embedding(text, self.embed_dim, self.seed)

    # -- construction from files -----------------------------------------

    @classmethod
    def from_fixture_file(cls, path: str | Path, **kwargs) -> ScriptedBackend:
        backend = cls(**kwargs)
        for lineno, rec in iter_jsonl(path):
            if "embed" in rec:
                backend.embed_fixtures[rec["embed"]] = np.asarray(rec["vector"], dtype=np.float64)
                continue
            try:
                template = rec["template"]
                response = rec["response"]
            except KeyError as exc:
                raise InputError(f"{path}:{lineno}: missing {exc.args[0]!r}") from None
            if "digest" in rec:
                backend.fixtures[(template, rec["digest"])] = response
            elif "inputs" in rec:
                backend.add_fixture(template, rec["inputs"], response)
            else:
                raise InputError(f"{path}:{lineno}: fixture needs 'inputs' or 'digest'")
        return backend

    @classmethod
    def from_log(cls, journal: PromptLog | str | Path, **kwargs) -> ScriptedBackend:
        """Replay backend that answers exactly what a recorded session saw."""
        if not isinstance(journal, PromptLog):
            journal = PromptLog.load(journal)
        kwargs.setdefault("strict_embed", True)
        backend = cls(**kwargs)
        for entry in journal.entries:
            if entry["kind"] == "chat":
                backend.fixtures[(entry["template"], entry["digest"])] = entry["response"]
            elif entry["kind"] == "embed":
                backend.embed_fixtures[entry["text"]] = decode_vector(entry["vector_b64"])
        return backend
