"""Numba switch.

Set ``S2P_DISABLE_NUMBA=1`` to run every hot kernel through its pure-numpy
twin. The flag is read once, at import time.
"""

import functools
import os

_disabled = os.environ.get("S2P_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _disabled

if HAVE_NUMBA:
    njit = functools.partial(numba.njit, cache=True, nogil=True)
else:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
