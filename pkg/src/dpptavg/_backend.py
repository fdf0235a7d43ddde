"""Kernel backend selection.

Hot loops are written once in plain Python/numpy style and compiled with
numba when it is available. Set ``DPPTAVG_BACKEND=numpy`` to force the
pure-numpy path (useful for debugging and for the backend benchmark).
"""
import os

BACKEND_ENV = "DPPTAVG_BACKEND"

_requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested != "numba":
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def maybe_njit(func):
    """Compile ``func`` with numba when enabled; keep the original as ``.py_func``."""
    if _njit is None:
        func.py_func = func
        return func
    return _njit(cache=True)(func)
