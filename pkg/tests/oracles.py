"""Independent reference implementations used as test oracles.

None of these touch the engine's kernels or graph internals: each works from
plain Python data (edge lists, interval lists, raw vectors) with the most
direct algorithm available, trading speed for obviousness.
"""

from __future__ import annotations

import numpy as np


def dense_ppr(
    nodes: list[str],
    edges: list[tuple[str, str]],
    seeds: dict[str, float],
    damping: float = 0.85,
    directed: bool = False,
    iters: int = 10_000,
    tol: float = 1e-15,
) -> dict[str, float]:
    """Dense power iteration on an explicitly built transition matrix.

    Each listed edge is one arc (two for undirected, one for a self loop).
    Nodes without outgoing arcs keep their mass via a self loop.
    """
    n = len(nodes)
    idx = {v: i for i, v in enumerate(nodes)}
    counts = np.zeros((n, n))
    for s, o in edges:
        i, j = idx[s], idx[o]
        counts[i, j] += 1.0
        if not directed and i != j:
            counts[j, i] += 1.0
    for i in range(n):
        if counts[i].sum() == 0:
            counts[i, i] = 1.0
    # column-stochastic: P[j, i] = P(i -> j)
    P = (counts / counts.sum(axis=1, keepdims=True)).T
    e = np.zeros(n)
    for v, w in seeds.items():
        e[idx[v]] += w
    x = e.copy()
    for _ in range(iters):
        y = (1 - damping) * e + damping * P @ x
        if np.abs(y - x).sum() < tol:
            x = y
            break
        x = y
    return {v: float(x[idx[v]]) for v in nodes}


def solved_ppr(nodes, edges, seeds, damping=0.85, directed=False) -> dict[str, float]:
    """Closed form ``(1 - d) (I - d P)^-1 e`` via a linear solve."""
    n = len(nodes)
    idx = {v: i for i, v in enumerate(nodes)}
    counts = np.zeros((n, n))
    for s, o in edges:
        counts[idx[s], idx[o]] += 1.0
        if not directed and s != o:
            counts[idx[o], idx[s]] += 1.0
    for i in range(n):
        if counts[i].sum() == 0:
            counts[i, i] = 1.0
    P = (counts / counts.sum(axis=1, keepdims=True)).T
    e = np.zeros(n)
    for v, w in seeds.items():
        e[idx[v]] += w
    x = np.linalg.solve(np.eye(n) - damping * P, (1 - damping) * e)
    return {v: float(x[idx[v]]) for v in nodes}


def brute_tiou(retrieved: list[tuple[int, int]], truth: list[tuple[int, int]]) -> float:
    """Mark every millisecond covered by each set and count."""
    hi = max(e for _, e in list(retrieved) + list(truth))
    a = np.zeros(hi, dtype=bool)
    b = np.zeros(hi, dtype=bool)
    for s, e in retrieved:
        a[s:e] = True
    for s, e in truth:
        b[s:e] = True
    union = int(np.count_nonzero(a | b))
    return int(np.count_nonzero(a & b)) / union if union else 0.0


def brute_topk(vectors: np.ndarray, starts: list[int], query: np.ndarray, k: int) -> list[int]:
    """Row indices of the ``k`` best cosines, earlier start first on ties."""
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    q = query / np.linalg.norm(query)
    sims = [float(np.dot(row, q)) for row in unit]
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], starts[i]))
    return order[:k]


def floor_subsample(n: int, m: int) -> list[int]:
    if n <= m:
        return list(range(n))
    if m == 1:
        return [0]
    return [(i * (n - 1)) // (m - 1) for i in range(m)]


def rank_edges(
    triples: list[tuple[str, str, str]],
    node_scores: dict[str, float],
    earliest: dict[tuple[str, str, str], float],
    k: int,
) -> list[tuple[str, str, str]]:
    """Score every edge by endpoint sum and sort with the documented tie-break."""
    scored = []
    for t in set(triples):
        s = node_scores[t[0]] + node_scores[t[2]]
        if s > 0:
            scored.append((-round(s, 9), earliest.get(t, float("inf")), t))
    scored.sort()
    return [t for _, _, t in scored[:k]]
