"""Kernel backend selection.

The compiled Cython kernels are used when the extension was built; otherwise
the numpy fallback is loaded. Set ``TWOVIEW_KERNELS=python`` to force the
fallback (useful for benchmarking and for cross-checking the two).
"""
import importlib
import os

BACKENDS = ("cython", "python")


def load_backend(name):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name == "cython":
        return importlib.import_module("twoview._ckernels")
    if name == "python":
        return importlib.import_module("twoview._pykernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    forced = os.environ.get("TWOVIEW_KERNELS", "").strip().lower()
    if forced:
        return forced, load_backend(forced)
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", load_backend("python")


BACKEND, _impl = _select()

relu = _impl.relu
relu_mask = _impl.relu_mask
col_moments = _impl.col_moments
adam_update = _impl.adam_update
