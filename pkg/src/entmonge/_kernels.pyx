# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled log-sum-exp reductions for the log-domain Sinkhorn loop.

Each row is reduced serially, so the result is independent of the number
of OpenMP threads.
"""

from cython.parallel cimport prange
from libc.math cimport exp, log, INFINITY

BACKEND = "cython"

cdef double UNDERFLOW = -746.0


cdef inline double _row_lse(const double* c, const double* a, Py_ssize_t m,
                            double inv_eps) noexcept nogil:
    cdef Py_ssize_t j
    cdef double t
    cdef double mx = -INFINITY
    cdef double s = 0.0
    for j in range(m):
        t = a[j] - c[j] * inv_eps
        if t > mx:
            mx = t
    if mx == -INFINITY:
        return -INFINITY
    for j in range(m):
        t = a[j] - c[j] * inv_eps - mx
        # exp underflows to exactly 0 below about -745.13; skipping keeps the sum bitwise equal
        if t > UNDERFLOW:
            s += exp(t)
    return mx + log(s)


def lse_rows(const double[:, ::1] C, const double[::1] a, double inv_eps,
             double[::1] out, int num_threads=1):
    """``out[i] = log sum_j exp(a[j] - C[i, j] * inv_eps)``; ``+inf`` costs drop out."""
    cdef Py_ssize_t n = C.shape[0]
    cdef Py_ssize_t m = C.shape[1]
    cdef Py_ssize_t i
    if a.shape[0] != m or out.shape[0] != n:
        raise ValueError("shape mismatch")
    if m == 0:
        out[:] = -INFINITY
        return
    if num_threads > 1:
        with nogil:
            for i in prange(n, schedule="static", num_threads=num_threads):
                out[i] = _row_lse(&C[i, 0], &a[0], m, inv_eps)
    else:
        with nogil:
            for i in range(n):
                out[i] = _row_lse(&C[i, 0], &a[0], m, inv_eps)
