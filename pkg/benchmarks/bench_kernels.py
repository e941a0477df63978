"""Compare the numba and numpy kernel builds.

    python benchmarks/bench_kernels.py            # kernel timings, both builds
    python benchmarks/bench_kernels.py --e2e      # also whole-graph PPR in two subprocesses
    python benchmarks/bench_kernels.py --json out.json

Kernel timings call both builds through ``kernels.IMPLEMENTATIONS`` in one
process (numba is compiled once before timing). The end-to-end run starts two
fresh interpreters, one with ``VIDMEM_DISABLE_NUMBA=1``, and times PPR over
random knowledge graphs through the public ``ppr`` entry point.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from vidmem import kernels


def _csr(rng, n, avg_degree):
    nnz = n * avg_degree
    rows = rng.integers(0, n, nnz)
    cols = rng.integers(0, n, nnz)
    w = rng.random(nnz)
    # column-stochastic, stored row-major
    w /= np.bincount(cols, weights=w, minlength=n)[cols]
    order = np.lexsort((cols, rows))
    rows, cols, w = rows[order], cols[order], w[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64), w


def _intervals(rng, m, span):
    s = np.sort(rng.integers(0, span, m)).astype(np.int64)
    return s, s + rng.integers(1, span // max(m, 1) * 3 + 2, m).astype(np.int64)


def _cases(rng, scale):
    n = 2_000 * scale
    indptr, indices, weights = _csr(rng, n, 6)
    seed = np.zeros(n)
    seed[rng.integers(0, n, 5)] = 0.2
    seg_ptr = np.arange(0, n * 4 + 1, 4, dtype=np.int64)
    seg_idx = rng.integers(0, n, n * 4).astype(np.int64)
    scores = rng.random(n)
    a_s, a_e = _intervals(rng, 500 * scale, 10_000_000)
    b_s, b_e = _intervals(rng, 500 * scale, 10_000_000)
    # intersection expects sorted, disjoint runs
    ca, cb = kernels.NUMPY.coalesce(a_s, a_e), kernels.NUMPY.coalesce(b_s, b_e)
    return {
        "ppr_power": (indptr, indices, weights, seed, 0.85, 1e-10, 200),
        "segment_mass": (seg_ptr, seg_idx, scores),
        "coalesce": (a_s, a_e),
        "intersection_length": (*ca, *cb),
    }


def _best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_timings(scale: int, repeats: int) -> list[dict]:
    cases = _cases(np.random.default_rng(0), scale)
    rows = []
    for name, args in cases.items():
        ref = None
        for impl_name, impl in sorted(kernels.IMPLEMENTATIONS.items()):
            fn = getattr(impl, name)
            out = fn(*args)  # compiles numba on first call
            first = out[0] if isinstance(out, tuple) else out
            if ref is None:
                ref = first
            else:
                np.testing.assert_allclose(np.asarray(first, dtype=float), np.asarray(ref, dtype=float), rtol=1e-9, atol=1e-12)
            rows.append({"kernel": name, "build": impl_name, "seconds": _best_of(fn, args, repeats)})
    return rows


E2E_SNIPPET = r"""
import json, sys, time
import numpy as np
from vidmem import kernels
from vidmem.graph import KnowledgeGraph, PprParams, Triplet, ppr
rng = np.random.default_rng(0)
graphs = []
for _ in range({n_graphs}):
    g = KnowledgeGraph()
    n = int(rng.integers(200, 2000))
    for _ in range(3 * n):
        s, o = rng.integers(0, n, 2)
        g.add(Triplet.build(f"n{{s}}", f"p{{rng.integers(4)}}", f"n{{o}}", ()))
    graphs.append(g)
ppr(graphs[0], {{graphs[0].nodes[0]: 1.0}})
t0 = time.perf_counter()
for g in graphs:
    ppr(g, {{g.nodes[0]: 1.0}}, PprParams(tolerance=1e-10))
print(json.dumps({{"build": kernels.ACTIVE.name, "seconds": time.perf_counter() - t0}}))
"""


def end_to_end(n_graphs: int) -> list[dict]:
    rows = []
    for disable in ("", "1"):
        env = dict(os.environ, VIDMEM_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, "-c", E2E_SNIPPET.format(n_graphs=n_graphs)], env=env, check=True, capture_output=True, text=True
        )
        rows.append({"kernel": f"ppr x{n_graphs} graphs", **json.loads(out.stdout.strip().splitlines()[-1])})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scale", type=int, default=5, help="problem size multiplier")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--e2e", action="store_true", help="also time PPR end to end under both env settings")
    ap.add_argument("--graphs", type=int, default=30)
    ap.add_argument("--json", help="write the timing rows to this file")
    args = ap.parse_args(argv)

    if "numba" not in kernels.IMPLEMENTATIONS:
        print("numba is not available (or disabled); only the numpy build will be timed", file=sys.stderr)
    rows = kernel_timings(args.scale, args.repeats)
    if args.e2e:
        rows += end_to_end(args.graphs)

    by_kernel: dict[str, dict[str, float]] = {}
    for r in rows:
        by_kernel.setdefault(r["kernel"], {})[r["build"]] = r["seconds"]
    print(f"{'kernel':<24}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, t in by_kernel.items():
        npy, nb = t.get("numpy"), t.get("numba")
        speed = f"{npy / nb:9.1f}x" if npy and nb else "      n/a"
        fmt = lambda x: f"{x * 1e3:12.3f}" if x is not None else f"{'-':>12}"  # noqa: E731
        print(f"{name:<24}{fmt(npy)}{fmt(nb)}{speed}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
