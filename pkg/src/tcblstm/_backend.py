"""Kernel backend selection.

Hot kernels ship in two flavours: loop code compiled with numba ``@njit`` and
a vectorised numpy fallback. Set ``TCBLSTM_DISABLE_NUMBA=1`` (or run without
numba installed) to force the numpy path. The choice is made once at import.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

_FLAG = os.environ.get("TCBLSTM_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def njit(func):
    """``numba.njit`` with caching, or the identity when numba is absent."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
