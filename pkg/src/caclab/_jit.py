"""Backend switch for the hot kernels.

Kernels are written once in the numba-compatible subset of Python. With
``CACLAB_NUMBA=0`` in the environment (read at import time) ``njit`` is the
identity decorator and every kernel runs as plain Python/numpy.
"""

import os

_FLAG = os.environ.get("CACLAB_NUMBA", "1").strip().lower()
USE_NUMBA = _FLAG not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        import numba as _numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if USE_NUMBA:

    def njit(func=None, **options):
        options.setdefault("cache", True)
        options.setdefault("nogil", True)
        if func is None:
            return lambda f: _numba.njit(**options)(f)
        return _numba.njit(**options)(func)

else:

    def njit(func=None, **options):
        if func is None:
            return lambda f: f
        return func


BACKEND = "numba" if USE_NUMBA else "python"


def python_impl(func):
    """Return the uncompiled Python body of a kernel (itself when numba is off)."""
    return getattr(func, "py_func", func)
