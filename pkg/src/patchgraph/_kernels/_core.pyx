# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot numeric kernels.

Same contract as ``_numpy.py``: C-contiguous float64 inputs, freshly
allocated outputs. Loop orders are fixed so results are reproducible
run to run (they may differ from the NumPy/BLAS backend in the last
few ulps because summation order differs).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp
from libc.stdlib cimport free, malloc, qsort
from libc.string cimport memcpy

cnp.import_array()

BACKEND_NAME = "compiled"


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, p
    cdef double aip
    with nogil:
        for i in range(m):
            for p in range(k):
                aip = a[i, p]
                for j in range(n):
                    c[i, j] += aip * b[p, j]
    return out


def matmul_nt(double[:, ::1] a, double[:, ::1] b):
    """a @ b.T"""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, p
    cdef double acc
    with nogil:
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for p in range(k):
                    acc += a[i, p] * b[j, p]
                c[i, j] = acc
    return out


def matmul_tn(double[:, ::1] a, double[:, ::1] b):
    """a.T @ b"""
    cdef Py_ssize_t k = a.shape[0], m = a.shape[1], n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, p
    cdef double api
    with nogil:
        for p in range(k):
            for i in range(m):
                api = a[p, i]
                for j in range(n):
                    c[i, j] += api * b[p, j]
    return out


def relu_fwd(x):
    cdef cnp.ndarray xa = np.ascontiguousarray(x)
    out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] yv = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            yv[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out


def relu_bwd(x, gy):
    cdef cnp.ndarray xa = np.ascontiguousarray(x)
    cdef cnp.ndarray ga = np.ascontiguousarray(gy)
    out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] if xv[i] > 0.0 else 0.0
    return out


def softmax_rows_fwd(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t i, j
    cdef double mx, s
    with nogil:
        for i in range(m):
            mx = x[i, 0]
            for j in range(1, n):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                y[i, j] = exp(x[i, j] - mx)
                s += y[i, j]
            for j in range(n):
                y[i, j] /= s
    return out


def softmax_rows_bwd(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] gx = out
    cdef Py_ssize_t i, j
    cdef double dot
    with nogil:
        for i in range(m):
            dot = 0.0
            for j in range(n):
                dot += gy[i, j] * y[i, j]
            for j in range(n):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


cdef int _cmp_double(const void* pa, const void* pb) noexcept nogil:
    cdef double a = (<const double*> pa)[0]
    cdef double b = (<const double*> pb)[0]
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def kth_smallest(double[::1] flat, Py_ssize_t k):
    """k-th smallest element of a 1-D array, 1-based k in [1, n]."""
    cdef Py_ssize_t n = flat.shape[0]
    cdef double* buf = <double*> malloc(n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double result
    with nogil:
        memcpy(buf, &flat[0], n * sizeof(double))
        qsort(buf, n, sizeof(double), &_cmp_double)
        result = buf[k - 1]
        free(buf)
    return result


def erase_fwd(double[:, ::1] s, double thr):
    """Zero every entry not strictly above thr; returns (erased, keep mask)."""
    cdef Py_ssize_t m = s.shape[0], n = s.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    mask = np.empty((m, n), dtype=np.uint8)
    cdef double[:, ::1] a = out
    cdef unsigned char[:, ::1] mk = mask
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                if s[i, j] > thr:
                    a[i, j] = s[i, j]
                    mk[i, j] = 1
                else:
                    a[i, j] = 0.0
                    mk[i, j] = 0
    return out, mask


def erase_bwd(double[:, ::1] gy, unsigned char[:, ::1] mask):
    cdef Py_ssize_t m = gy.shape[0], n = gy.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] gs = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                gs[i, j] = gy[i, j] if mask[i, j] else 0.0
    return out
