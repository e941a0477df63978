"""Numba switch.

Set ``VIDMEM_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba is
not importable the numpy path is used silently.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("VIDMEM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by VIDMEM_DISABLE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when available, otherwise ``None``."""
    if _njit is None:
        return None
    return _njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
