"""Numba switch.

Hot kernels are written twice: a numba ``@njit`` loop and a vectorised numpy
equivalent. Setting ``SEACAM_NO_NUMBA=1`` (or running without numba
installed) selects the numpy path everywhere.
"""
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SEACAM_NO_NUMBA", "").lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def pick(numba_impl, numpy_impl, use_numba=None):
    """Return the implementation selected by ``use_numba`` (default: env flag)."""
    if use_numba is None:
        use_numba = USE_NUMBA
    return numba_impl if (use_numba and HAVE_NUMBA) else numpy_impl
