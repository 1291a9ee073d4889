"""Numba switch.

Hot kernels are written twice: a loop version compiled with ``numba.njit`` and a
vectorised numpy version. ``ERRT_DISABLE_NUMBA=1`` selects the numpy path even
when numba is importable.
"""
from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("ERRT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when numba exists, identity otherwise."""
    if not HAVE_NUMBA:
        return func if func is not None else (lambda f: f)
    kwargs.setdefault("cache", True)
    if func is None:
        return numba.njit(**kwargs)
    return numba.njit(**kwargs)(func)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
