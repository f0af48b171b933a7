"""Optional numba acceleration.

Set ``CPDEGEN_DISABLE_NUMBA=1`` to run every kernel as plain numpy.  The
kernels are written in the numpy subset numba understands, so both paths
execute the same arithmetic.
"""

import os

_DISABLE = os.environ.get("CPDEGEN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLE:
        raise ImportError("disabled by CPDEGEN_DISABLE_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def maybe_njit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise.

    The undecorated function stays reachable as ``.py_func`` either way.
    """
    if not HAS_NUMBA:
        func.py_func = func
        return func
    return numba.njit(cache=True)(func)


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
