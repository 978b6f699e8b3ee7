"""Switch between numba-compiled kernels and the pure-numpy fallbacks.

Set ``HAMSPEC_DISABLE_NUMBA=1`` before import to force the fallback path.
"""

import os

_DISABLED = os.environ.get("HAMSPEC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend():
    return "numba" if HAS_NUMBA else "numpy"
