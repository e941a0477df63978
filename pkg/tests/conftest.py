from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vidmem import kernels

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=sorted(kernels.IMPLEMENTATIONS))
def impl(request):
    return kernels.IMPLEMENTATIONS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_world():
    """The default synthetic corpus, its oracle backend and built memories."""
    from vidmem.ingest import BuildReport, build_memories
    from vidmem.synthetic import generate, oracle_backend

    corpus = generate()
    backend = oracle_backend(corpus.script)
    report = BuildReport()
    memories = build_memories(
        corpus.segments,
        backend,
        timescales=corpus.timescales,
        features=corpus.features,
        frames=corpus.frames,
        report=report,
    )
    assert report.errors == []
    return corpus, backend, memories


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    lines = acceptance_log.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
