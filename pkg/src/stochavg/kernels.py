"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when
``STOCHAVG_BACKEND=numpy`` is set, the numpy fallback is used. Both
expose ``advance`` and ``sup_sq_cost`` with identical contracts.
"""
import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("STOCHAVG_BACKEND", "").lower() != "numpy":
    BACKEND = "cython"
    _impl = _compiled
else:
    BACKEND = "numpy"
    _impl = _fallback


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"cython"``, ``"numpy"``, or the active one)."""
    if name is None:
        return _impl
    if name == "numpy":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def advance(*args):
    return _impl.advance(*args)


def sup_sq_cost(a, b):
    return _impl.sup_sq_cost(a, b)


def set_backend(name: str) -> None:
    """Make ``name`` the active backend for every later call."""
    global _impl, BACKEND
    _impl = get_backend(name)
    BACKEND = name
