"""Optional numba acceleration.

Kernels are written twice: explicit loops compiled with ``njit`` and
vectorized numpy. ``GUIRISE_NUMBA=0`` makes numpy the default backend;
:func:`set_backend` switches at runtime (benchmarks, equivalence tests).
"""
import os

try:
    from numba import njit
    NUMBA_INSTALLED = True
except ImportError:  # pragma: no cover
    NUMBA_INSTALLED = False

USE_NUMBA = NUMBA_INSTALLED and os.environ.get("GUIRISE_NUMBA", "1").lower() not in ("0", "false", "no")


def optional_njit(*args, **kwargs):
    """njit when numba is importable, identity otherwise."""
    def decorator(func):
        if NUMBA_INSTALLED:
            return njit(*args, **kwargs)(func)
        return func
    return decorator
