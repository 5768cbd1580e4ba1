"""Backend selection for the convolution kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Set ``CHROMUNROLL_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CHROMUNROLL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _as_rows(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.ascontiguousarray(x[None, :]), True
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1])), False


def _run(fn, x, taps, offset):
    rows, flat = _as_rows(x)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    out = fn(rows, taps, int(offset))
    return out[0] if flat else out.reshape(np.shape(x))


def conv_same(x, taps, offset, impl=None):
    """Zero-padded convolution along the last axis, ``y[i] = sum_j taps[j] x[i-offset-j]``."""
    return _run((impl or _impl).conv_same, x, taps, offset)


def corr_same(x, taps, offset, impl=None):
    """Exact adjoint of :func:`conv_same`, ``y[i] = sum_j taps[j] x[i+offset+j]``."""
    return _run((impl or _impl).corr_same, x, taps, offset)
