"""Hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``LATENTPANEL_BACKEND``
(``numba`` or ``numpy``). ``numba`` is the default when it imports; setting
``numpy`` skips compilation entirely. Use :func:`use_backend` to switch at
runtime, e.g. in tests or benchmarks.
"""
import contextlib
import importlib
import os

from . import _numpy

_NAMES = ("cross_moments", "discrepancy_matrix", "causal_pair", "causal_matrix",
          "ks_distance", "ks_matrix")


def _load(name):
    if name == "numpy":
        return _numpy
    if name == "numba":
        return importlib.import_module(f"{__name__}._numba")
    raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")


def _initial():
    requested = os.environ.get("LATENTPANEL_BACKEND", "numba").strip().lower()
    if requested == "numba":
        try:
            return "numba", _load("numba")
        except ImportError:
            return "numpy", _numpy
    return requested, _load(requested)


BACKEND, _impl = _initial()


def get(name):
    """Return the kernel ``name`` from the active backend."""
    return getattr(_impl, name)


def backend_module(name):
    return _load(name)


def set_backend(name):
    global BACKEND, _impl
    _impl = _load(name)
    BACKEND = name


@contextlib.contextmanager
def use_backend(name):
    old = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)
