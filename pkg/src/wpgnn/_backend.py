"""Select the compiled kernels when available, else the numpy fallback.

Set ``WPGNN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

try:
    if os.environ.get("WPGNN_PURE_PYTHON") == "1":
        raise ImportError("pure-python backend requested")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"


def use_compiled():
    return _ckernels is not None and BACKEND == "cython"


def set_backend(name):
    """Switch between ``"cython"`` and ``"python"`` at runtime (tests, benchmarks)."""
    global BACKEND
    if name == "cython" and _ckernels is None:
        raise ImportError("compiled kernels are not built")
    if name not in ("cython", "python"):
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def kernel_sums(train_z, reg_z, sigma):
    if use_compiled():
        return _ckernels.kernel_sums(train_z, reg_z, float(sigma))
    return _pykernels.kernel_sums(train_z, reg_z, sigma)
