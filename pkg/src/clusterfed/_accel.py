"""Optional numba acceleration.

Set ``CLUSTERFED_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels. Both paths must produce identical results; the test suite
checks this.
"""
import os

DISABLED = os.environ.get("CLUSTERFED_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def maybe_njit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if HAVE_NUMBA:
        return _njit(cache=True)(func)
    return func
