"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``MCLNN_BACKEND=python`` forces the fallback,
``MCLNN_BACKEND=compiled`` makes a missing extension an error.
"""

import os
from functools import lru_cache

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_choice = os.environ.get("MCLNN_BACKEND", "").strip().lower()
if _choice == "compiled" and _ckernels is None:
    raise ImportError("MCLNN_BACKEND=compiled but mclnn._ckernels is not built")
if _choice == "python" or _ckernels is None:
    _impl = _pykernels
    BACKEND = "python"
else:
    _impl = _ckernels
    BACKEND = "compiled"

AVAILABLE = {"python": _pykernels}
if _ckernels is not None:
    AVAILABLE["compiled"] = _ckernels


def get(name=None):
    """Return a backend module by name (default: the active one)."""
    if name is None:
        return _impl
    try:
        return AVAILABLE[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(AVAILABLE)}") from None


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul(a, b):
    return _impl.matmul(_f64(a), _f64(b))


@lru_cache(maxsize=64)
def _full_runs(l, e):
    return (np.arange(e + 1, dtype=np.int64), np.zeros(e, dtype=np.int64), np.full(e, l, dtype=np.int64))


def _runs(mask, l, e):
    return _full_runs(l, e) if mask is None else mask.column_runs


def clnn_forward(x, z, mask=None):
    """Window-summed pre-activation; ``z`` must already be masked."""
    z = _f64(z)
    return np.asarray(_impl.clnn_forward(_f64(x), z, _runs(mask, z.shape[1], z.shape[2])))


def clnn_backward(x, z, delta, mask=None):
    z = _f64(z)
    gz, gx = _impl.clnn_backward(_f64(x), z, _f64(delta), _runs(mask, z.shape[1], z.shape[2]))
    return np.asarray(gz), np.asarray(gx)


def fft_rows(data, twiddles):
    """Transform every row of a complex128 C-contiguous array in place."""
    _impl.fft_rows(data, np.ascontiguousarray(twiddles, dtype=np.complex128))
    return data
