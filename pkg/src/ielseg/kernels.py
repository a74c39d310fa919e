"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``IELSEG_BACKEND=python`` to force the fallback, or call :func:`set_backend`.
"""
import os

import numpy as np

from ielseg import _pykernels

try:
    from ielseg import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_impl = _pykernels
backend = "python"


def set_backend(name):
    """Switch the active kernel backend; returns the previous name."""
    global _impl, backend
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable (have {sorted(BACKENDS)})")
    prev = backend
    _impl, backend = BACKENDS[name], name
    return prev


_requested = os.environ.get("IELSEG_BACKEND", "")
if _requested:
    set_backend(_requested)
elif _ckernels is not None:
    set_backend("cython")


def _stack3(u):
    """View ``u`` (..., H, W) as a contiguous (N, H, W) float array."""
    u = np.asarray(u)
    if u.dtype not in (np.float32, np.float64):
        u = u.astype(np.float64)
    return np.ascontiguousarray(u.reshape((-1,) + u.shape[-2:]))


def laplacian(u, h=1.0):
    u = np.asarray(u)
    return _impl.laplacian(_stack3(u), 1.0 / (h * h)).reshape(u.shape)


def grad_mag_central(u, h=1.0):
    u = np.asarray(u)
    return _impl.grad_mag_central(_stack3(u), 1.0 / (2.0 * h)).reshape(u.shape)


def im2col3x3(x):
    return _impl.im2col3x3(np.ascontiguousarray(x))


def col2im3x3(cols, h, w):
    return _impl.col2im3x3(np.ascontiguousarray(cols), h, w)


def disc_count(f, r):
    return _impl.disc_count(np.ascontiguousarray(f, dtype=np.int32), int(r))
