# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tree kernels. Semantics must match ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def project_children(const double[:, ::1] values, const double[:, ::1] coef):
    """out[j, m, f] = sum_b coef[b, j] * values[m*B + b, f]."""
    cdef Py_ssize_t B = coef.shape[0]
    cdef Py_ssize_t J = coef.shape[1]
    cdef Py_ssize_t F = values.shape[1]
    cdef Py_ssize_t M = values.shape[0] // B
    cdef Py_ssize_t m, b, j, f, row
    cdef double c
    out = np.zeros((J, M, F), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    for m in range(M):
        for b in range(B):
            row = m * B + b
            for j in range(J):
                c = coef[b, j]
                if c == 0.0:
                    continue
                for f in range(F):
                    o[j, m, f] += c * values[row, f]
    return out


def lift_children(const double[:, :, ::1] comps, const double[:, ::1] basis):
    """out[m*B + b, f] = sum_j basis[b, j] * comps[j, m, f]."""
    cdef Py_ssize_t B = basis.shape[0]
    cdef Py_ssize_t J = comps.shape[0]
    cdef Py_ssize_t M = comps.shape[1]
    cdef Py_ssize_t F = comps.shape[2]
    cdef Py_ssize_t m, b, j, f, row
    cdef double c, acc
    out = np.empty((M * B, F), dtype=np.float64)
    cdef double[:, ::1] o = out
    for m in range(M):
        for b in range(B):
            row = m * B + b
            for f in range(F):
                acc = 0.0
                for j in range(J):
                    acc += basis[b, j] * comps[j, m, f]
                o[row, f] = acc
    return out
