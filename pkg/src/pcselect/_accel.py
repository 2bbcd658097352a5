"""Backend switch for the hot kernels.

Every compiled kernel in the package has a numba version and a pure-numpy
version.  The numba path is used when numba imports and the environment
variable ``PCSELECT_DISABLE_NUMBA`` is unset (or ``0``).  Tests and the
benchmark flip the backend at runtime with :func:`set_backend`.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENV_FLAG = "PCSELECT_DISABLE_NUMBA"
NUMBA_AVAILABLE = numba is not None


def _env_disabled() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("", "0", "false", "no")


_backend = "numba" if NUMBA_AVAILABLE and not _env_disabled() else "numpy"


def backend() -> str:
    return _backend


def use_numba() -> bool:
    return _backend == "numba"


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    kwargs.setdefault("cache", True)
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
