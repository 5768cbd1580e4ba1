# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled short-kernel convolutions on row batches.

Row-major ``(batch, n)`` float64 inputs, zero padding, output length ``n``.
Tap ``j`` sits at displacement ``offset + j``. Every output sample
accumulates its taps in ascending ``j`` starting from 0.0, the same order
as the numpy fallback, so both backends return identical bits.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _max(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t _min(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


def conv_same(const double[:, ::1] x, const double[::1] taps, Py_ssize_t offset):
    cdef Py_ssize_t b = x.shape[0], n = x.shape[1], m = taps.shape[0]
    out = np.zeros((b, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t r, i, j, lo, hi, d
    cdef double tj
    cdef const double* xr
    cdef double* yr
    with nogil:
        for r in range(b):
            xr = &x[r, 0]
            yr = &y[r, 0]
            for j in range(m):
                d = offset + j
                tj = taps[j]
                lo = _max(0, d)
                hi = _min(n, n + d)
                for i in range(lo, hi):
                    yr[i] = yr[i] + tj * xr[i - d]
    return out


def corr_same(const double[:, ::1] x, const double[::1] taps, Py_ssize_t offset):
    cdef Py_ssize_t b = x.shape[0], n = x.shape[1], m = taps.shape[0]
    out = np.zeros((b, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t r, i, j, lo, hi, d
    cdef double tj
    cdef const double* xr
    cdef double* yr
    with nogil:
        for r in range(b):
            xr = &x[r, 0]
            yr = &y[r, 0]
            for j in range(m):
                d = offset + j
                tj = taps[j]
                lo = _max(0, -d)
                hi = _min(n, n - d)
                for i in range(lo, hi):
                    yr[i] = yr[i] + tj * xr[i + d]
    return out
