"""Visual memory: a unit-norm feature index plus a timestamp-indexed frame store.

Features are one vector per fixed-length visual segment. Search is an exact
full scan (``features @ query``) which is fast enough for ~10^5 segments per
stream and removes any question of approximate recall.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import FrameRef, TimeRange
from .errors import DegenerateFeature, DimensionMismatch, InvalidArgument

DEFAULT_MAX_FRAMES = 5
NORM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class FeatureEntry:
    segment_id: str
    range: TimeRange
    vector: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureEntry):
            return NotImplemented
        return (
            self.segment_id == other.segment_id
            and self.range == other.range
            and self.vector.shape == other.vector.shape
            and np.array_equal(self.vector, other.vector)
        )

    __hash__ = None

    def to_record(self) -> dict:
        return {
            "id": self.segment_id,
            "start": self.range.start_ms,
            "end": self.range.end_ms,
            "vector": self.vector.tolist(),
        }


class FeatureHit(NamedTuple):
    segment_id: str
    similarity: float


def _unit(raw, dim: int | None) -> np.ndarray:
    vec = np.asarray(raw, dtype=np.float64).reshape(-1)
    if dim is not None and vec.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise DegenerateFeature("feature vector has non-finite entries")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateFeature("zero feature vector")
    out = vec / norm
    out.setflags(write=False)
    return out


class VisualMemory:
    def __init__(self, visual_scale_ms: int = 30_000, dim: int | None = None):
        if visual_scale_ms <= 0:
            raise InvalidArgument(f"visual scale must be positive, got {visual_scale_ms}")
        self.visual_scale_ms = int(visual_scale_ms)
        self.dim = dim
        self.features: list[FeatureEntry] = []
        self.frames: list[FrameRef] = []
        self._by_id: dict[str, int] = {}
        self._matrix: np.ndarray | None = None
        self._starts: np.ndarray | None = None
        self._frame_ts: list[int] = []

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisualMemory):
            return NotImplemented
        return (
            self.visual_scale_ms == other.visual_scale_ms
            and self.dim == other.dim
            and self.features == other.features
            and self.frames == other.frames
        )

    def __repr__(self) -> str:
        return f"VisualMemory(t_v={self.visual_scale_ms}, features={len(self.features)}, frames={len(self.frames)})"

    def is_empty(self) -> bool:
        return not self.features and not self.frames

    def entry(self, segment_id: str) -> FeatureEntry:
        return self.features[self._by_id[segment_id]]

    def range_of(self, segment_id: str) -> TimeRange:
        return self.entry(segment_id).range

    # -- index maintenance ------------------------------------------------

    def _insert_feature(self, entry: FeatureEntry) -> None:
        if entry.segment_id in self._by_id:
            raise InvalidArgument(f"duplicate visual segment id {entry.segment_id!r}")
        if not self.features or self.features[-1].range.start_ms < entry.range.start_ms:
            self._by_id[entry.segment_id] = len(self.features)
            self.features.append(entry)
        else:
            starts = [f.range.start_ms for f in self.features]
            pos = bisect.bisect_left(starts, entry.range.start_ms)
            if starts[pos] == entry.range.start_ms:
                raise InvalidArgument(f"a visual segment already starts at {entry.range.start_ms} ms")
            self.features.insert(pos, entry)
            self._by_id = {f.segment_id: i for i, f in enumerate(self.features)}
        self._matrix = None
        self._starts = None

    def _insert_frame(self, frame: FrameRef) -> None:
        if not self._frame_ts or self._frame_ts[-1] < frame.timestamp_ms:
            self._frame_ts.append(frame.timestamp_ms)
            self.frames.append(frame)
            return
        pos = bisect.bisect_left(self._frame_ts, frame.timestamp_ms)
        if pos < len(self._frame_ts) and self._frame_ts[pos] == frame.timestamp_ms:
            raise InvalidArgument(f"duplicate frame timestamp {frame.timestamp_ms}")
        self._frame_ts.insert(pos, frame.timestamp_ms)
        self.frames.insert(pos, frame)

    def _index(self) -> tuple[np.ndarray, np.ndarray]:
        if self._matrix is None:
            if self.features:
                self._matrix = np.stack([f.vector for f in self.features])
            else:
                self._matrix = np.zeros((0, self.dim or 0))
            self._starts = np.fromiter((f.range.start_ms for f in self.features), np.int64, len(self.features))
        return self._matrix, self._starts

    def check_tiling(self) -> None:
        """Raise unless feature ranges tile ``[0, end)`` in steps of ``t_v``."""
        expected = 0
        for i, f in enumerate(self.features):
            r = f.range
            if r.start_ms != expected:
                raise InvalidArgument(f"visual segment {f.segment_id!r} starts at {r.start_ms}, expected {expected}")
            last = i == len(self.features) - 1
            if r.duration_ms != self.visual_scale_ms and not (last and r.duration_ms < self.visual_scale_ms):
                raise InvalidArgument(f"visual segment {f.segment_id!r} has length {r.duration_ms} ms")
            expected = r.end_ms

    def validate(self) -> None:
        dims = {f.vector.shape[0] for f in self.features}
        if len(dims) > 1:
            raise DimensionMismatch(f"mixed feature dimensions {sorted(dims)}")
        for f in self.features:
            if abs(float(np.linalg.norm(f.vector)) - 1.0) > NORM_TOLERANCE:
                raise DegenerateFeature(f"feature {f.segment_id!r} is not unit norm")
        self.check_tiling()
        ts = [fr.timestamp_ms for fr in self.frames]
        if any(a >= b for a, b in zip(ts, ts[1:])):
            raise InvalidArgument("frame timestamps must be strictly increasing")

    # -- records ----------------------------------------------------------

    def feature_records(self) -> list[dict]:
        return [f.to_record() for f in self.features]

    def frame_records(self) -> list[dict]:
        return [f.to_record() for f in self.frames]


def index_segment(
    mem: VisualMemory, seg_range: TimeRange, raw_vector, segment_id: str | None = None
) -> VisualMemory:
    """Normalize ``raw_vector`` and store it for ``seg_range`` (in place)."""
    seg_range = TimeRange.coerce(seg_range)
    if seg_range.start_ms % mem.visual_scale_ms or seg_range.duration_ms > mem.visual_scale_ms:
        raise InvalidArgument(
            f"range {seg_range} is not aligned to the {mem.visual_scale_ms} ms visual partition"
        )
    vec = _unit(raw_vector, mem.dim)
    if mem.dim is None:
        mem.dim = int(vec.shape[0])
    sid = segment_id or f"v{seg_range.start_ms}"
    mem._insert_feature(FeatureEntry(sid, seg_range, vec))
    return mem


def restore_feature(mem: VisualMemory, segment_id: str, seg_range: TimeRange, vector) -> VisualMemory:
    """Re-insert an already normalized vector bit-for-bit (snapshot loading)."""
    vec = np.asarray(vector, dtype=np.float64).reshape(-1)
    if mem.dim is not None and vec.shape[0] != mem.dim:
        raise DimensionMismatch(f"expected dimension {mem.dim}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)) or abs(float(np.linalg.norm(vec)) - 1.0) > NORM_TOLERANCE:
        raise DegenerateFeature(f"stored feature {segment_id!r} is not unit norm")
    if mem.dim is None:
        mem.dim = int(vec.shape[0])
    vec.setflags(write=False)
    mem._insert_feature(FeatureEntry(segment_id, TimeRange.coerce(seg_range), vec))
    return mem


def add_frames(mem: VisualMemory, frames) -> VisualMemory:
    for fr in frames:
        mem._insert_frame(fr if isinstance(fr, FrameRef) else FrameRef.from_record(fr))
    return mem


def feature_search(mem: VisualMemory, query_vector, k: int) -> list[FeatureHit]:
    """Exact top-``k`` by cosine, ties broken by earlier start."""
    if k <= 0:
        raise InvalidArgument(f"k must be positive, got {k}")
    if not mem.features:
        return []
    q = _unit(query_vector, mem.dim)
    mat, starts = mem._index()
    sims = mat @ q
    order = np.lexsort((starts, -sims))[:k]
    return [FeatureHit(mem.features[i].segment_id, float(sims[i])) for i in order]


def subsample_indices(n: int, m: int) -> list[int]:
    """Evenly spread ``min(n, m)`` indices over ``range(n)`` including both ends."""
    if m <= 0:
        raise InvalidArgument(f"max_frames must be positive, got {m}")
    if n <= m:
        return list(range(n))
    if m == 1:
        return [0]
    return [i * (n - 1) // (m - 1) for i in range(m)]


def timestamp_fetch(mem: VisualMemory, range_: TimeRange, max_frames: int = DEFAULT_MAX_FRAMES) -> list[FrameRef]:
    range_ = TimeRange.coerce(range_)
    lo = bisect.bisect_left(mem._frame_ts, range_.start_ms)
    hi = bisect.bisect_left(mem._frame_ts, range_.end_ms)
    inside: Sequence[FrameRef] = mem.frames[lo:hi]
    return [inside[i] for i in subsample_indices(len(inside), max_frames)]


def build_visual(
    features: Sequence, frames: Sequence = (), visual_scale_ms: int = 30_000
) -> VisualMemory:
    """Build from ``(segment_id, range, vector)`` tuples and frame refs."""
    mem = VisualMemory(visual_scale_ms)
    for sid, rng, vec in features:
        index_segment(mem, rng, vec, sid)
    add_frames(mem, frames)
    return mem
