"""Kernel backend selection.

The compiled extension is used when it imports; set ``DROPGP_PURE_PYTHON=1``
to force the numpy fallback.
"""
from contextlib import contextmanager
import os

if os.environ.get("DROPGP_PURE_PYTHON", "") not in ("", "0"):
    from dropgp import _pykernels as impl
else:
    try:
        from dropgp import _ckernels as impl
    except ImportError:  # extension not built
        from dropgp import _pykernels as impl

from dropgp import _pykernels

BACKEND = impl.BACKEND
uniform_grid = impl.uniform_grid
normal_grid = impl.normal_grid

# Above this many multiply-adds the BLAS product in the numpy kernel beats the
# compiled loop, so large layers always go through numpy.
LOOP_MAX_WORK = 4096


def masked_layer(h, z, w, b, act, scale):
    if impl is _pykernels or h.shape[0] * h.shape[1] * w.shape[1] > LOOP_MAX_WORK:
        return _pykernels.masked_layer(h, z, w, b, act, scale)
    return impl.masked_layer(h, z, w, b, act, scale)


def available():
    """Names of the backends that can be selected."""
    try:
        from dropgp import _ckernels  # noqa: F401
        return ("cython", "numpy")
    except ImportError:
        return ("numpy",)


@contextmanager
def use_backend(name):
    """Temporarily route every kernel through the named backend."""
    global impl, BACKEND, uniform_grid, normal_grid
    if name == "cython":
        from dropgp import _ckernels as chosen
    elif name == "numpy":
        chosen = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    saved = impl, BACKEND, uniform_grid, normal_grid
    impl, BACKEND = chosen, chosen.BACKEND
    uniform_grid, normal_grid = chosen.uniform_grid, chosen.normal_grid
    try:
        yield
    finally:
        impl, BACKEND, uniform_grid, normal_grid = saved
