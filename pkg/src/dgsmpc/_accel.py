"""Optional numba acceleration.

Set ``DGSMPC_DISABLE_NUMBA=1`` to run every kernel as plain numpy code. The
flag is read once at import time.
"""

import os

_FLAG = os.environ.get("DGSMPC_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

NUMBA_ENABLED = _numba is not None


def kernel(func):
    """Compile ``func`` with ``numba.njit`` when available, else return it unchanged."""
    if _numba is None:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
