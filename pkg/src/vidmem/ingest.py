"""Input file readers and the end-to-end memory build.

Input formats (JSON lines, ``#`` comments and blank lines allowed):

segments
    ``{"id", "start", "end", "scale", "caption", "transcript"?}``; times are
    integer ms or ``DAY X HH:MM:SS`` strings.
features
    ``{"id", "start", "end", "vector_b64"}`` (little-endian float64, base64)
    or ``{"id", "start", "end", "vector": [...]}``.
frames
    ``{"timestamp", "locator"}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ._jsonio import iter_jsonl
from .actions import EPISODIC, SEMANTIC, VISUAL
from .agent import Memories
from .backends import PromptLog, decode_vector, encode_vector
from .core import FrameRef, Segment, TimeRange, TimescaleConfig, parse_timestamp
from .episodic import build_episodic
from .errors import ConfigError, InputError, VidmemError
from .semantic import MATCH_THRESHOLD, build_semantic
from .visual import VisualMemory, add_frames, index_segment

log = logging.getLogger(__name__)


def read_segments(path: str | Path) -> list[Segment]:
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            out.append(Segment.from_record(rec))
        except (KeyError, TypeError, ValueError, VidmemError) as exc:
            raise InputError(f"{path}:{lineno}: bad segment record ({exc})") from None
    return out


def feature_record(segment_id: str, range_: TimeRange, vector) -> dict:
    return {
        "id": segment_id,
        "start": range_.start_ms,
        "end": range_.end_ms,
        "vector_b64": encode_vector(np.asarray(vector, dtype=np.float64)),
    }


def _ms(value) -> int:
    return parse_timestamp(value) if isinstance(value, str) else int(value)


def read_features(path: str | Path) -> list[tuple[str, TimeRange, np.ndarray]]:
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            rng = TimeRange(_ms(rec["start"]), _ms(rec["end"]))
            if "vector_b64" in rec:
                vec = decode_vector(rec["vector_b64"])
            else:
                vec = np.asarray(rec["vector"], dtype=np.float64)
            out.append((str(rec["id"]), rng, vec))
        except (KeyError, TypeError, ValueError, VidmemError) as exc:
            raise InputError(f"{path}:{lineno}: bad feature record ({exc})") from None
    return out


def read_frames(path: str | Path) -> list[FrameRef]:
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            out.append(FrameRef.from_record(rec))
        except (KeyError, TypeError, ValueError, VidmemError) as exc:
            raise InputError(f"{path}:{lineno}: bad frame record ({exc})") from None
    return out


@dataclass
class BuildReport:
    errors: list[tuple[str, str]] = field(default_factory=list)

    def record(self, where: str, exc: Exception) -> None:
        self.errors.append((where, f"{type(exc).__name__}: {exc}"))


def build_memories(
    segments: Iterable[Segment],
    backend,
    *,
    timescales: TimescaleConfig | None = None,
    enabled: frozenset[str] = frozenset({EPISODIC, SEMANTIC, VISUAL}),
    features: Iterable[tuple[str, TimeRange, np.ndarray]] | None = None,
    frames: Iterable[FrameRef] = (),
    consolidation_threshold: float = MATCH_THRESHOLD,
    journal: PromptLog | None = None,
    report: BuildReport | None = None,
) -> Memories:
    """Build every enabled memory. Semantic memory needs the episodic build."""
    timescales = timescales or TimescaleConfig()
    if VISUAL in enabled and features is None:
        raise ConfigError("visual memory is enabled but no feature file was given")
    report = report if report is not None else BuildReport()
    segments = list(segments)
    episodic = semantic = visual = None
    if EPISODIC in enabled or SEMANTIC in enabled:
        episodic = build_episodic(segments, backend, timescales, journal=journal, on_error=report.record)
    if SEMANTIC in enabled:
        semantic = build_semantic(
            episodic, backend, threshold=consolidation_threshold, journal=journal, on_error=report.record
        )
    if EPISODIC not in enabled:
        episodic = None
    if VISUAL in enabled:
        visual = VisualMemory(timescales.visual_scale_ms)
        for sid, rng, vec in features:
            try:
                index_segment(visual, rng, vec, sid)
            except VidmemError as exc:
                report.record(sid, exc)
        add_frames(visual, sorted(frames))
        visual.check_tiling()
    return Memories(episodic, semantic, visual, timescales)
