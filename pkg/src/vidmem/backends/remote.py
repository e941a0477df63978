"""Chat-completions style HTTP client.

Speaks the widely used ``POST {endpoint}/chat/completions`` and
``POST {endpoint}/embeddings`` request/response shapes. Frames are sent as
``image_url`` content parts: http(s) and data URLs pass through, local paths
are inlined as base64 data URLs.
"""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

from ..errors import BackendError, ConfigError, TransportError
from .base import ChatRequest

log = logging.getLogger(__name__)

_RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    model: str
    embed_model: str | None = None
    api_key_env: str = "VIDMEM_API_KEY"
    timeout_s: float = 120.0
    retries: int = 3
    backoff_s: float = 1.0
    max_in_flight: int = 4
    multimodal: bool = True

    @classmethod
    def from_env(cls, prefix: str = "VIDMEM_", **overrides) -> RemoteConfig:
        """Build from ``{prefix}ENDPOINT``, ``{prefix}MODEL``, ``{prefix}EMBED_MODEL``."""
        endpoint = overrides.pop("endpoint", None) or os.environ.get(f"{prefix}ENDPOINT")
        model = overrides.pop("model", None) or os.environ.get(f"{prefix}MODEL")
        if not endpoint or not model:
            raise ConfigError(f"remote backend needs {prefix}ENDPOINT and {prefix}MODEL")
        overrides.setdefault("embed_model", os.environ.get(f"{prefix}EMBED_MODEL"))
        return cls(endpoint=endpoint, model=model, **overrides)


def _frame_url(locator: str) -> str:
    if locator.startswith(("http://", "https://", "data:")):
        return locator
    path = Path(locator)
    if not path.is_file():
        raise ConfigError(f"frame locator {locator!r} is neither a URL nor a readable file")
    mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
    return f"data:{mime};base64,{base64.b64encode(path.read_bytes()).decode('ascii')}"


class RemoteBackend:
    def __init__(self, config: RemoteConfig, client: httpx.Client | None = None, *, name: str | None = None):
        self.config = config
        self.name = name or f"remote:{config.model}"
        self.multimodal = config.multimodal
        headers = {}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._headers = headers
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.endpoint.rstrip("/") + path
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.backoff_s * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(url, json=payload, headers=self._headers)
            except httpx.TransportError as exc:
                last = exc
                log.warning("POST %s failed (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code in _RETRY_STATUS:
                last = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                log.warning("POST %s returned %d (attempt %d)", url, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"POST {url} -> HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                return resp.json()
            except ValueError:
                raise BackendError(f"POST {url} returned non-JSON body") from None
        raise TransportError(f"POST {url} failed after {self.config.retries + 1} attempts: {last}")

    def chat(self, request: ChatRequest) -> str:
        if request.frames:
            content = [{"type": "text", "text": request.user}]
            content += [{"type": "image_url", "image_url": {"url": _frame_url(f.locator)}} for f in request.frames]
        else:
            content = request.user
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": content},
            ],
        }
        body = self._post("/chat/completions", payload)
        try:
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise BackendError(f"unexpected chat response shape: {str(body)[:300]}") from None

    def embed(self, text: str) -> np.ndarray:
        model = self.config.embed_model or self.config.model
        body = self._post("/embeddings", {"model": model, "input": text})
        try:
            return np.asarray(body["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError):
            raise BackendError(f"unexpected embedding response shape: {str(body)[:300]}") from None

    def close(self) -> None:
        self._client.close()
