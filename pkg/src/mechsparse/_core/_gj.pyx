# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled fast path of the masked Gauss-Jordan inverse.

Covers the common case where every pivot is usable in index order. On a
zero/tiny pivot it bails out with the stage index so the caller can rerun
the permutation-fixing pure-Python path instead.
"""

from libc.math cimport fabs


def gj_inverse_fast(double[:, ::1] A, double[:, ::1] B, double pivot_tol):
    """Run elimination in place on (A, B); return -1 on success, else the stage."""
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double p, c
    for k in range(m):
        p = A[k, k]
        if fabs(p) <= pivot_tol:
            return k
        for j in range(m):
            A[k, j] /= p
            B[k, j] /= p
        for i in range(m):
            if i == k:
                continue
            c = A[i, k]
            if c != 0.0:
                for j in range(m):
                    A[i, j] -= c * A[k, j]
                    B[i, j] -= c * B[k, j]
    return -1
