"""Time arithmetic, segmentation and the temporal IoU metric.

All times are integer milliseconds from the stream origin. ``DAY1 00:00:00``
is the origin for the egocentric ``DAY X HH:MM:SS`` text format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import InputError, InvalidArgument

MS_PER_SECOND = 1_000
MS_PER_MINUTE = 60 * MS_PER_SECOND
MS_PER_HOUR = 60 * MS_PER_MINUTE
MS_PER_DAY = 24 * MS_PER_HOUR


@dataclass(frozen=True, order=True)
class TimeRange:
    start_ms: int
    end_ms: int

    def __post_init__(self):
        if not isinstance(self.start_ms, (int, np.integer)) or not isinstance(self.end_ms, (int, np.integer)):
            raise InvalidArgument(f"time range bounds must be integers, got {self.start_ms!r}, {self.end_ms!r}")
        object.__setattr__(self, "start_ms", int(self.start_ms))
        object.__setattr__(self, "end_ms", int(self.end_ms))
        if self.start_ms < 0:
            raise InvalidArgument(f"negative start {self.start_ms}")
        if self.start_ms >= self.end_ms:
            raise InvalidArgument(f"empty or inverted range [{self.start_ms}, {self.end_ms})")

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms

    def overlaps(self, other: TimeRange) -> bool:
        return self.start_ms < other.end_ms and other.start_ms < self.end_ms

    def contains_ms(self, t: int) -> bool:
        return self.start_ms <= t < self.end_ms

    def to_list(self) -> list[int]:
        return [self.start_ms, self.end_ms]

    @classmethod
    def coerce(cls, value) -> TimeRange:
        if isinstance(value, TimeRange):
            return value
        if isinstance(value, str):
            return parse_range(value)
        start, end = value
        return cls(int(start), int(end))

    def __str__(self) -> str:
        return format_range(self)


@dataclass(frozen=True)
class Segment:
    id: str
    range: TimeRange
    scale_ms: int
    caption: str
    transcript: str | None = None

    def __post_init__(self):
        if not self.id:
            raise InvalidArgument("segment id must be non-empty")
        if self.scale_ms <= 0:
            raise InvalidArgument(f"segment {self.id}: non-positive scale {self.scale_ms}")
        if self.range.duration_ms > self.scale_ms:
            raise InvalidArgument(
                f"segment {self.id}: length {self.range.duration_ms} ms exceeds its scale {self.scale_ms} ms"
            )

    @property
    def start_ms(self) -> int:
        return self.range.start_ms

    @property
    def end_ms(self) -> int:
        return self.range.end_ms

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "start": self.range.start_ms,
            "end": self.range.end_ms,
            "scale": self.scale_ms,
            "caption": self.caption,
        }
        if self.transcript is not None:
            rec["transcript"] = self.transcript
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> Segment:
        start, end = rec["start"], rec["end"]
        if isinstance(start, str):
            start = parse_timestamp(start)
        if isinstance(end, str):
            end = parse_timestamp(end)
        return cls(
            id=str(rec["id"]),
            range=TimeRange(int(start), int(end)),
            scale_ms=int(rec["scale"]),
            caption=rec.get("caption", ""),
            transcript=rec.get("transcript"),
        )


@dataclass(frozen=True, order=True)
class FrameRef:
    """A stored frame: capture time plus an opaque locator (path, URL, key)."""

    timestamp_ms: int
    locator: str

    def to_record(self) -> dict:
        return {"timestamp": self.timestamp_ms, "locator": self.locator}

    @classmethod
    def from_record(cls, rec: dict) -> FrameRef:
        ts = rec["timestamp"]
        if isinstance(ts, str):
            ts = parse_timestamp(ts)
        return cls(int(ts), str(rec["locator"]))


@dataclass(frozen=True)
class TimescaleConfig:
    scales_ms: tuple[int, ...] = (30 * MS_PER_SECOND, 3 * MS_PER_MINUTE, 10 * MS_PER_MINUTE, MS_PER_HOUR)
    semantic_scale_ms: int = 10 * MS_PER_MINUTE
    visual_scale_ms: int = 30 * MS_PER_SECOND

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales_ms)
        object.__setattr__(self, "scales_ms", scales)
        if not scales:
            raise InvalidArgument("at least one timescale is required")
        if any(s <= 0 for s in scales):
            raise InvalidArgument(f"timescales must be positive: {scales}")
        if any(a >= b for a, b in zip(scales, scales[1:])):
            raise InvalidArgument(f"timescales must be strictly increasing: {scales}")
        if self.semantic_scale_ms <= 0 or self.visual_scale_ms <= 0:
            raise InvalidArgument("semantic and visual scales must be positive")

    @property
    def fine_ms(self) -> int:
        return self.scales_ms[0]

    def to_dict(self) -> dict:
        return {
            "scales_ms": list(self.scales_ms),
            "semantic_scale_ms": self.semantic_scale_ms,
            "visual_scale_ms": self.visual_scale_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TimescaleConfig:
        return cls(
            scales_ms=tuple(d["scales_ms"]),
            semantic_scale_ms=int(d.get("semantic_scale_ms", 10 * MS_PER_MINUTE)),
            visual_scale_ms=int(d.get("visual_scale_ms", 30 * MS_PER_SECOND)),
        )


def partition_timeline(total_ms: int, scale_ms: int) -> list[TimeRange]:
    """Split ``[0, total_ms)`` into consecutive pieces of ``scale_ms``.

    The trailing piece is kept even when shorter than ``scale_ms``.
    """
    if total_ms <= 0 or scale_ms <= 0:
        raise InvalidArgument(f"total_ms and scale_ms must be positive, got {total_ms}, {scale_ms}")
    return [TimeRange(s, min(s + scale_ms, total_ms)) for s in range(0, total_ms, scale_ms)]


def _as_arrays(ranges: Iterable) -> tuple[np.ndarray, np.ndarray]:
    rs = [TimeRange.coerce(r) for r in ranges]
    starts = np.fromiter((r.start_ms for r in rs), dtype=np.int64, count=len(rs))
    ends = np.fromiter((r.end_ms for r in rs), dtype=np.int64, count=len(rs))
    return starts, ends


def union_ranges(ranges: Iterable) -> list[TimeRange]:
    """Coalesce overlapping or touching ranges into a sorted disjoint list."""
    s, e = kernels.coalesce(*_as_arrays(ranges))
    return [TimeRange(int(a), int(b)) for a, b in zip(s, e)]


def total_duration(ranges: Iterable) -> int:
    s, e = kernels.coalesce(*_as_arrays(ranges))
    return int((e - s).sum())


def tiou_fraction(retrieved: Sequence, truth: Sequence) -> Fraction:
    """Exact temporal IoU of two interval sets (each coalesced first)."""
    if not truth:
        raise InvalidArgument("ground-truth ranges must be non-empty")
    if not retrieved:
        return Fraction(0)
    a_s, a_e = kernels.coalesce(*_as_arrays(retrieved))
    b_s, b_e = kernels.coalesce(*_as_arrays(truth))
    inter = kernels.intersection_length(a_s, a_e, b_s, b_e)
    union = int((a_e - a_s).sum()) + int((b_e - b_s).sum()) - inter
    return Fraction(inter, union)


def tiou(retrieved: Sequence, truth: Sequence) -> float:
    return float(tiou_fraction(retrieved, truth))


# ---------------------------------------------------------------------------
# "DAY X HH:MM:SS" text format
# ---------------------------------------------------------------------------

_CLOCK = r"(\d{1,2}):(\d{2}):(\d{2})(?:\.(\d{1,3}))?"
_STAMP_RE = re.compile(r"^\s*DAY\s*(\d+)\s+" + _CLOCK + r"\s*$", re.IGNORECASE)
_RANGE_RE = re.compile(
    r"^\s*\[?\s*DAY\s*(\d+)\s+" + _CLOCK + r"\s*[-–~]\s*(?:DAY\s*(\d+)\s+)?" + _CLOCK + r"\s*\]?\s*$",
    re.IGNORECASE,
)


def _clock_ms(h: str, m: str, s: str, frac: str | None) -> int:
    hh, mm, ss = int(h), int(m), int(s)
    if mm >= 60 or ss >= 60 or hh > 24:
        raise InputError(f"invalid clock value {h}:{m}:{s}")
    ms = int((frac or "0").ljust(3, "0"))
    return hh * MS_PER_HOUR + mm * MS_PER_MINUTE + ss * MS_PER_SECOND + ms


def _day_ms(day: str) -> int:
    d = int(day)
    if d < 1:
        raise InputError(f"day numbers start at 1, got DAY{d}")
    return (d - 1) * MS_PER_DAY


def parse_timestamp(text: str) -> int:
    m = _STAMP_RE.match(text)
    if not m:
        raise InputError(f"not a DAY X HH:MM:SS timestamp: {text!r}")
    return _day_ms(m.group(1)) + _clock_ms(*m.group(2, 3, 4, 5))


def parse_range(text: str) -> TimeRange:
    """Parse ``DAY2 18:34:01-18:34:29`` or ``DAY 1 23:00:00 - DAY 2 01:00:00``."""
    m = _RANGE_RE.match(text)
    if not m:
        raise InputError(f"not a timestamp range: {text!r}")
    start = _day_ms(m.group(1)) + _clock_ms(*m.group(2, 3, 4, 5))
    end_day = m.group(6) or m.group(1)
    end = _day_ms(end_day) + _clock_ms(*m.group(7, 8, 9, 10))
    return TimeRange(start, end)


def is_range_query(text: str) -> bool:
    return _RANGE_RE.match(text) is not None


def _clock_text(ms_in_day: int) -> str:
    secs, ms = divmod(ms_in_day, MS_PER_SECOND)
    h, rem = divmod(secs, 3600)
    m, s = divmod(rem, 60)
    out = f"{h:02d}:{m:02d}:{s:02d}"
    return f"{out}.{ms:03d}" if ms else out


def format_timestamp(ms: int) -> str:
    day, rest = divmod(int(ms), MS_PER_DAY)
    return f"DAY{day + 1} {_clock_text(rest)}"


def format_range(r: TimeRange) -> str:
    d0, rest0 = divmod(r.start_ms, MS_PER_DAY)
    d1, rest1 = divmod(r.end_ms, MS_PER_DAY)
    if d0 == d1:
        return f"DAY{d0 + 1} {_clock_text(rest0)}-{_clock_text(rest1)}"
    return f"{format_timestamp(r.start_ms)}-{format_timestamp(r.end_ms)}"


def format_scale(scale_ms: int) -> str:
    """Short label for a timescale: ``30s``, ``3min``, ``1h``, or ``250ms``."""
    if scale_ms % MS_PER_HOUR == 0:
        return f"{scale_ms // MS_PER_HOUR}h"
    if scale_ms % MS_PER_MINUTE == 0:
        return f"{scale_ms // MS_PER_MINUTE}min"
    if scale_ms % MS_PER_SECOND == 0:
        return f"{scale_ms // MS_PER_SECOND}s"
    return f"{scale_ms}ms"


_SCALE_RE = re.compile(r"^\s*(\d+)\s*(ms|s|min|h)\s*$")
_SCALE_UNITS = {"ms": 1, "s": MS_PER_SECOND, "min": MS_PER_MINUTE, "h": MS_PER_HOUR}


def parse_scale(label: str) -> int:
    m = _SCALE_RE.match(label)
    if not m:
        raise InputError(f"not a timescale label: {label!r}")
    return int(m.group(1)) * _SCALE_UNITS[m.group(2)]
