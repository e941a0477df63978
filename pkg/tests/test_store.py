from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_memories
from vidmem.agent import Memories
from vidmem.episodic import EpisodicMemory
from vidmem.errors import DigestMismatch, SnapshotError, UnsupportedVersion
from vidmem.store import MANIFEST, load, save, snapshot_digest


def _same(a: Memories, b: Memories):
    assert a.timescales == b.timescales
    assert a.episodic == b.episodic
    assert a.semantic.graph == b.semantic.graph
    assert a.semantic.generation == b.semantic.generation
    assert [r.to_record() for r in a.semantic.journal] == [r.to_record() for r in b.semantic.journal]
    assert a.visual.feature_records() == b.visual.feature_records()
    assert a.visual.frame_records() == b.visual.frame_records()
    for fa, fb in zip(a.visual.features, b.visual.features):
        assert fa.vector.tobytes() == fb.vector.tobytes()


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_round_trip(tmp_path_factory, seed):
    mem = random_memories(seed)
    path = tmp_path_factory.mktemp("snap") / "s"
    digest = save(mem, path)
    assert digest == snapshot_digest(mem)
    back = load(path)
    _same(mem, back)
    assert snapshot_digest(back) == digest
    # a second save of the loaded state is byte-identical
    again = path.parent / "again"
    save(back, again)
    for f in sorted(p.relative_to(path) for p in path.rglob("*") if p.is_file()):
        assert (again / f).read_bytes() == (path / f).read_bytes()


def test_partial_memories_round_trip(tmp_path):
    mem = random_memories(3)
    only = Memories(mem.episodic, None, None, mem.timescales)
    save(only, tmp_path / "s")
    back = load(tmp_path / "s")
    assert back.available() == frozenset({"episodic"})
    assert back.episodic == mem.episodic


def _files(path):
    return sorted(p for p in path.rglob("*") if p.is_file())


def test_single_bit_flips_are_detected(tmp_path):
    rng = np.random.default_rng(7)
    path = tmp_path / "s"
    save(random_memories(11), path)
    files = _files(path)
    pristine = {f: f.read_bytes() for f in files}
    for _ in range(60):
        f = files[int(rng.integers(len(files)))]
        data = bytearray(pristine[f])
        if not data:
            continue
        i = int(rng.integers(len(data)))
        data[i] ^= 1 << int(rng.integers(8))
        f.write_bytes(bytes(data))
        with pytest.raises(SnapshotError):
            load(path)
        f.write_bytes(pristine[f])
    load(path)


def test_truncation_and_missing_files(tmp_path):
    path = tmp_path / "s"
    save(random_memories(5), path)
    target = path / "episodic" / "scale-1000.segments.jsonl"
    original = target.read_bytes()
    target.write_bytes(original[:-1])
    with pytest.raises(DigestMismatch):
        load(path)
    target.unlink()
    with pytest.raises(SnapshotError, match="missing"):
        load(path)
    with pytest.raises(SnapshotError):
        load(tmp_path / "nowhere")


def test_version_mismatch(tmp_path):
    path = tmp_path / "s"
    save(random_memories(5), path)
    manifest = json.loads((path / MANIFEST).read_text())
    manifest["version"] = 99
    (path / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(UnsupportedVersion):
        load(path)


def test_failed_save_keeps_previous_snapshot(tmp_path, monkeypatch):
    path = tmp_path / "s"
    first = save(random_memories(1), path)
    import vidmem.store as store

    def broken(fd):
        raise OSError("disk full")

    monkeypatch.setattr(store.os, "fsync", broken)
    with pytest.raises(OSError):
        save(random_memories(2), path)
    monkeypatch.undo()
    assert snapshot_digest(load(path)) == first
    assert [p.name for p in tmp_path.iterdir()] == ["s"]


def test_overwrite_replaces_snapshot(tmp_path):
    path = tmp_path / "s"
    save(random_memories(1), path)
    second = save(random_memories(2), path)
    assert snapshot_digest(load(path)) == second
    assert [p.name for p in tmp_path.iterdir()] == ["s"]


def test_empty_episodic_memory_round_trips(tmp_path):
    mem = Memories(EpisodicMemory(random_memories(0).timescales))
    save(mem, tmp_path / "s")
    assert load(tmp_path / "s").episodic.is_empty()
