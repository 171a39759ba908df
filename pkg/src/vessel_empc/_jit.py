"""Optional numba acceleration.

Set ``VESSEL_EMPC_NUMBA=0`` in the environment to force the pure-numpy
fallback kernels (useful for debugging and for the kernel benchmark).
"""

import os

_flag = os.environ.get("VESSEL_EMPC_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn
