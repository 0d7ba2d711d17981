"""Kernel backend selection.

Hot loops (the explicit time step and the return map) exist twice: a numba
``@njit`` version and a vectorised numpy version.  The numba path is used when
numba imports and ``IMPACTFORGE_BACKEND`` is not set to ``numpy``.
"""
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAS_NUMBA = False

_requested = os.environ.get("IMPACTFORGE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"IMPACTFORGE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

DEFAULT_BACKEND = "numba" if (HAS_NUMBA and _requested == "numba") else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def resolve(backend=None):
    if backend is None:
        return DEFAULT_BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
