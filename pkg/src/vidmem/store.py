"""Snapshot directories: a manifest plus line-delimited record files.

Layout (version 1)::

    manifest.json
    episodic/scale-<ms>.segments.jsonl
    episodic/scale-<ms>.graph.jsonl
    semantic/journal.jsonl
    semantic/graph.jsonl
    visual/features.jsonl
    visual/frames.jsonl

The manifest lists every payload file with its SHA-256 and byte count, and
carries ``digest``: the SHA-256 of the canonical manifest JSON without the
``digest`` key. The manifest itself is stored canonically, so any change to
any byte of the snapshot is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

from ._jsonio import canonical_json, dumps_lines
from .agent import Memories
from .core import FrameRef, Segment, TimeRange, TimescaleConfig
from .episodic import EpisodicMemory
from .errors import DigestMismatch, SnapshotError, UnsupportedVersion, VidmemError
from .graph import EPISODIC, SEMANTIC, KnowledgeGraph
from .semantic import ConsolidationRecord, SemanticMemory
from .visual import VisualMemory, add_frames, restore_feature

FORMAT = "vidmem-snapshot"
VERSION = 1
DIGEST_ALGORITHM = "sha256"
MANIFEST = "manifest.json"


def _payloads(memories: Memories) -> dict[str, bytes]:
    files: dict[str, bytes] = {}
    if memories.episodic is not None:
        for scale, st in sorted(memories.episodic.per_scale.items()):
            files[f"episodic/scale-{scale}.segments.jsonl"] = dumps_lines(s.to_record() for s in st.ordered_segments())
            files[f"episodic/scale-{scale}.graph.jsonl"] = dumps_lines(st.graph.to_records())
    if memories.semantic is not None:
        files["semantic/journal.jsonl"] = dumps_lines(r.to_record() for r in memories.semantic.journal)
        files["semantic/graph.jsonl"] = dumps_lines(memories.semantic.graph.to_records())
    if memories.visual is not None:
        files["visual/features.jsonl"] = dumps_lines(memories.visual.feature_records())
        files["visual/frames.jsonl"] = dumps_lines(memories.visual.frame_records())
    return files


def _manifest(memories: Memories, files: dict[str, bytes]) -> dict:
    components = sorted(memories.available())
    body = {
        "format": FORMAT,
        "version": VERSION,
        "digest_algorithm": DIGEST_ALGORITHM,
        "timescales": memories.timescales.to_dict(),
        "components": components,
        "semantic_generation": memories.semantic.generation if memories.semantic is not None else None,
        "visual": (
            {"visual_scale_ms": memories.visual.visual_scale_ms, "dim": memories.visual.dim}
            if memories.visual is not None
            else None
        ),
        "files": {
            name: {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)} for name, data in sorted(files.items())
        },
    }
    body["digest"] = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
    return body


def snapshot_digest(memories: Memories) -> str:
    """Digest ``save`` would embed, without writing anything."""
    return _manifest(memories, _payloads(memories))["digest"]


def save(memories: Memories, path: str | Path) -> str:
    """Write a snapshot atomically and return its digest.

    The new snapshot is assembled in a sibling temp directory and swapped in
    by rename; a failure before the swap leaves any prior snapshot intact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    files = _payloads(memories)
    manifest = _manifest(memories, files)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        for name, data in files.items():
            target = tmp / name
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
        with open(tmp / MANIFEST, "wb") as fh:
            fh.write(canonical_json(manifest).encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())
        old = None
        if path.exists():
            old = path.with_name(f".{path.name}.old-{os.getpid()}")
            if old.exists():
                shutil.rmtree(old)
            os.rename(path, old)
        os.rename(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)
    return manifest["digest"]


def _read_manifest(path: Path) -> dict:
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise SnapshotError(f"{path} is not a snapshot (no {MANIFEST})")
    raw = mpath.read_bytes()
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise DigestMismatch(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise DigestMismatch("manifest is not a JSON object")
    if manifest.get("format") != FORMAT:
        raise SnapshotError(f"unknown snapshot format {manifest.get('format')!r}")
    if manifest.get("version") != VERSION:
        raise UnsupportedVersion(f"snapshot version {manifest.get('version')!r} is not supported (expected {VERSION})")
    if manifest.get("digest_algorithm") != DIGEST_ALGORITHM:
        raise UnsupportedVersion(f"digest algorithm {manifest.get('digest_algorithm')!r} is not supported")
    if canonical_json(manifest).encode("utf-8") != raw:
        raise DigestMismatch("manifest bytes are not in canonical form")
    body = {k: v for k, v in manifest.items() if k != "digest"}
    if hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest() != manifest.get("digest"):
        raise DigestMismatch("manifest digest does not match its contents")
    return manifest


def _read_files(path: Path, manifest: dict) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for name, meta in manifest["files"].items():
        fpath = path / name
        if not fpath.is_file():
            raise SnapshotError(f"snapshot file {name} is missing")
        data = fpath.read_bytes()
        if len(data) != meta["bytes"]:
            raise DigestMismatch(f"{name}: expected {meta['bytes']} bytes, found {len(data)}")
        if hashlib.sha256(data).hexdigest() != meta["sha256"]:
            raise DigestMismatch(f"{name}: sha256 mismatch")
        try:
            out[name] = [json.loads(line) for line in data.decode("utf-8").splitlines() if line]
        except (UnicodeDecodeError, ValueError) as exc:
            raise SnapshotError(f"{name}: unreadable record ({exc})") from None
    return out


def load(path: str | Path) -> Memories:
    """Load and fully re-validate a snapshot; nothing partial is returned."""
    path = Path(path)
    manifest = _read_manifest(path)
    records = _read_files(path, manifest)
    try:
        return _assemble(manifest, records)
    except VidmemError as exc:
        raise SnapshotError(f"snapshot {path} failed validation: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"snapshot {path} has malformed records: {exc!r}") from exc


def _assemble(manifest: dict, records: dict[str, list[dict]]) -> Memories:
    timescales = TimescaleConfig.from_dict(manifest["timescales"])
    components = set(manifest["components"])
    episodic = semantic = visual = None
    if "episodic" in components:
        episodic = EpisodicMemory(timescales)
        for scale, st in episodic.per_scale.items():
            for rec in records[f"episodic/scale-{scale}.segments.jsonl"]:
                seg = Segment.from_record(rec)
                st.segments[seg.id] = seg
            st.graph = KnowledgeGraph.from_records(records[f"episodic/scale-{scale}.graph.jsonl"], EPISODIC)
        episodic.validate()
    if "semantic" in components:
        journal = [ConsolidationRecord.from_record(r) for r in records["semantic/journal.jsonl"]]
        semantic = SemanticMemory.replay(journal)
        stored = KnowledgeGraph.from_records(records["semantic/graph.jsonl"], SEMANTIC)
        if stored != semantic.graph:
            raise SnapshotError("semantic graph does not match its journal replay")
        if manifest.get("semantic_generation") != semantic.generation:
            raise SnapshotError("semantic generation does not match the journal")
    if "visual" in components:
        vmeta = manifest["visual"]
        visual = VisualMemory(int(vmeta["visual_scale_ms"]), vmeta["dim"])
        for rec in records["visual/features.jsonl"]:
            restore_feature(visual, rec["id"], TimeRange(int(rec["start"]), int(rec["end"])), rec["vector"])
        add_frames(visual, (FrameRef.from_record(r) for r in records["visual/frames.jsonl"]))
        visual.validate()
    return Memories(episodic, semantic, visual, timescales)
