"""Numeric inner loops.

Every kernel exists twice: a numba ``@njit`` version and a vectorised numpy
version with identical semantics. The module-level names point at the numba
build unless ``VIDMEM_DISABLE_NUMBA`` is set (see ``_accel``). Both builds are
always reachable through :data:`IMPLEMENTATIONS` so tests and the benchmark can
compare them.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from ._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# Personalized PageRank power iteration over a CSR transition matrix.
#
# Row i of the CSR holds the non-zeros W[i, j] of the column-stochastic
# transition matrix, so one step is y = (1 - d) * seed + d * (W @ x).
# ---------------------------------------------------------------------------


def _ppr_power_np(indptr, indices, weights, seed, damping, tol, max_iter):
    n = seed.shape[0]
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    x = seed.copy()
    restart = (1.0 - damping) * seed
    delta = np.inf
    it = 0
    while it < max_iter:
        it += 1
        y = restart + damping * np.bincount(rows, weights=weights * x[indices], minlength=n)
        delta = float(np.abs(y - x).sum())
        x = y
        if delta < tol:
            break
    return x, it, delta


def _ppr_power_py(indptr, indices, weights, seed, damping, tol, max_iter):
    n = seed.shape[0]
    x = seed.copy()
    y = np.empty(n)
    delta = np.inf
    it = 0
    while it < max_iter:
        it += 1
        delta = 0.0
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += weights[k] * x[indices[k]]
            y[i] = (1.0 - damping) * seed[i] + damping * acc
            delta += abs(y[i] - x[i])
        for i in range(n):
            x[i] = y[i]
        if delta < tol:
            break
    return x, it, delta


# ---------------------------------------------------------------------------
# Segment mass: out[s] = sum(node_scores[nodes incident to segment s]).
# ---------------------------------------------------------------------------


def _segment_mass_np(indptr, indices, node_scores):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    return np.bincount(rows, weights=node_scores[indices], minlength=n).astype(np.float64)


def _segment_mass_py(indptr, indices, node_scores):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    for s in range(n):
        acc = 0.0
        for k in range(indptr[s], indptr[s + 1]):
            acc += node_scores[indices[k]]
        out[s] = acc
    return out


# ---------------------------------------------------------------------------
# Interval sets: coalesce half-open [start, end) int64 intervals, and measure
# the overlap of two coalesced sets.
# ---------------------------------------------------------------------------


def _coalesce_np(starts, ends):
    if starts.shape[0] == 0:
        return starts.copy(), ends.copy()
    order = np.argsort(starts, kind="stable")
    s = starts[order]
    e = np.maximum.accumulate(ends[order])
    new_group = np.empty(s.shape[0], dtype=np.bool_)
    new_group[0] = True
    new_group[1:] = s[1:] > e[:-1]
    first = np.flatnonzero(new_group)
    last = np.append(first[1:] - 1, s.shape[0] - 1)
    return s[first], e[last]


def _coalesce_py(starts, ends):
    n = starts.shape[0]
    out_s = np.empty(n, dtype=np.int64)
    out_e = np.empty(n, dtype=np.int64)
    if n == 0:
        return out_s, out_e
    order = np.argsort(starts, kind="mergesort")
    m = 0
    cur_s = starts[order[0]]
    cur_e = ends[order[0]]
    for k in range(1, n):
        i = order[k]
        if starts[i] > cur_e:
            out_s[m] = cur_s
            out_e[m] = cur_e
            m += 1
            cur_s = starts[i]
            cur_e = ends[i]
        elif ends[i] > cur_e:
            cur_e = ends[i]
    out_s[m] = cur_s
    out_e[m] = cur_e
    m += 1
    return out_s[:m], out_e[:m]


def _intersection_length_np(a_s, a_e, b_s, b_e):
    if a_s.shape[0] == 0 or b_s.shape[0] == 0:
        return 0
    bounds = np.unique(np.concatenate((a_s, a_e, b_s, b_e)))
    if bounds.shape[0] < 2:
        return 0
    mid2 = bounds[:-1] + bounds[1:]

    def covered(s, e):
        k = np.searchsorted(2 * s, mid2, side="right") - 1
        ok = k >= 0
        res = np.zeros(mid2.shape[0], dtype=np.bool_)
        res[ok] = 2 * e[k[ok]] > mid2[ok]
        return res

    both = covered(a_s, a_e) & covered(b_s, b_e)
    return int(np.diff(bounds)[both].sum())


def _intersection_length_py(a_s, a_e, b_s, b_e):
    i = 0
    j = 0
    total = 0
    while i < a_s.shape[0] and j < b_s.shape[0]:
        lo = max(a_s[i], b_s[j])
        hi = min(a_e[i], b_e[j])
        if hi > lo:
            total += hi - lo
        if a_e[i] < b_e[j]:
            i += 1
        else:
            j += 1
    return total


NUMPY = SimpleNamespace(
    name="numpy",
    ppr_power=_ppr_power_np,
    segment_mass=_segment_mass_np,
    coalesce=_coalesce_np,
    intersection_length=_intersection_length_np,
)

IMPLEMENTATIONS = {"numpy": NUMPY}

if HAVE_NUMBA:
    NUMBA = SimpleNamespace(
        name="numba",
        ppr_power=njit(_ppr_power_py),
        segment_mass=njit(_segment_mass_py),
        coalesce=njit(_coalesce_py),
        intersection_length=njit(_intersection_length_py),
    )
    IMPLEMENTATIONS["numba"] = NUMBA
    ACTIVE = NUMBA
else:
    ACTIVE = NUMPY


def ppr_power(indptr, indices, weights, seed, damping, tol, max_iter):
    """Run power iteration; returns ``(scores, iterations, last_l1_delta)``."""
    x, it, delta = ACTIVE.ppr_power(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(seed, dtype=np.float64),
        float(damping),
        float(tol),
        int(max_iter),
    )
    return x, int(it), float(delta)


def segment_mass(indptr, indices, node_scores):
    return ACTIVE.segment_mass(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(node_scores, dtype=np.float64),
    )


def coalesce(starts, ends):
    return ACTIVE.coalesce(
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(ends, dtype=np.int64),
    )


def intersection_length(a_starts, a_ends, b_starts, b_ends) -> int:
    """Overlap measure of two *coalesced* interval sets."""
    return int(
        ACTIVE.intersection_length(
            np.ascontiguousarray(a_starts, dtype=np.int64),
            np.ascontiguousarray(a_ends, dtype=np.int64),
            np.ascontiguousarray(b_starts, dtype=np.int64),
            np.ascontiguousarray(b_ends, dtype=np.int64),
        )
    )
