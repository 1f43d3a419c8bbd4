"""Optional numba acceleration.

Hot loops are written once as ``@njit`` kernels and once as vectorised numpy
code. Setting ``PROBEMH_DISABLE_NUMBA=1`` (or running without numba installed)
selects the numpy path everywhere.
"""

import os

_DISABLED = os.environ.get("PROBEMH_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # bare @njit and @njit(...) both resolve to the undecorated function
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def _inner(fn):
            return fn

        return _inner


def is_jitted(fn):
    """True if ``fn`` is a numba dispatcher usable inside another kernel."""
    if not HAVE_NUMBA:
        return False
    from numba.core.registry import CPUDispatcher

    return isinstance(fn, CPUDispatcher)


def use_numba():
    return HAVE_NUMBA
