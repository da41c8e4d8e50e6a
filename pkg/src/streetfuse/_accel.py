"""Numba switch.

Set ``STREETFUSE_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""

import os

_disabled = os.environ.get("STREETFUSE_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
