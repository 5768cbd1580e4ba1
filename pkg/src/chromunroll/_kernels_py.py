"""Pure numpy fallback for :mod:`chromunroll._kernels`."""

import numpy as np


def conv_same(x, taps, offset):
    b, n = x.shape
    y = np.zeros((b, n))
    for j, t in enumerate(taps):
        d = offset + j
        if abs(d) >= n:
            continue
        if d >= 0:
            y[:, d:] += t * x[:, : n - d]
        else:
            y[:, : n + d] += t * x[:, -d:]
    return y


def corr_same(x, taps, offset):
    b, n = x.shape
    y = np.zeros((b, n))
    for j, t in enumerate(taps):
        d = offset + j
        if abs(d) >= n:
            continue
        if d >= 0:
            y[:, : n - d] += t * x[:, d:]
        else:
            y[:, -d:] += t * x[:, : n + d]
    return y
