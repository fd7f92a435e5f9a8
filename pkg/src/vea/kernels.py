"""Backend selection for the hot kernels.

The compiled module is used when it was built; ``VEA_BACKEND=python`` forces
the numpy fallback. Callers go through this module, never the backends.
"""
import logging
import os

import numpy as np

from . import _pykernels

log = logging.getLogger(__name__)

BACKENDS = {"python": _pykernels}
try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels


def _initial_backend():
    wanted = os.environ.get("VEA_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            log.warning("VEA_BACKEND=%s unavailable; using %s", wanted,
                        "cython" if _ckernels else "python")
        else:
            return wanted
    return "cython" if _ckernels is not None else "python"


_active = _initial_backend()


def backend_name():
    return _active


def set_backend(name):
    """Switch the active backend; returns the previous name."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown or unbuilt backend {name!r}; available: {sorted(BACKENDS)}")
    prev, _active = _active, name
    return prev


def _impl():
    return BACKENDS[_active]


def im2col(x, kh, kw, stride, pad):
    return _impl().im2col(np.ascontiguousarray(x), kh, kw, stride, pad)


def col2im(cols, shape, kh, kw, stride, pad):
    n, c, h, w = shape
    return _impl().col2im(np.ascontiguousarray(cols), n, c, h, w, kh, kw, stride, pad)


def maxpool_forward(x, k, stride, pad):
    return _impl().maxpool_forward(np.ascontiguousarray(x), k, stride, pad)


def maxpool_backward(grad_out, arg, shape):
    return _impl().maxpool_backward(np.ascontiguousarray(grad_out), arg, shape[2], shape[3])
