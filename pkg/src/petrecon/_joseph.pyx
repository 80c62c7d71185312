# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Joseph forward projector and its exact transpose.

Mirrors ``petrecon._joseph_py`` operation for operation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor

cnp.import_array()


cdef inline void _setup(double cos_t, double sin_t, double s, double pixel, int n,
                        bint *by_rows, double *u0, double *du, double *length) noexcept nogil:
    cdef double c = (n - 1) / 2.0
    if fabs(cos_t) >= fabs(sin_t):
        by_rows[0] = True
        length[0] = pixel / fabs(cos_t)
        du[0] = -sin_t / cos_t
        u0[0] = s / (pixel * cos_t) + c - c * du[0]
    else:
        by_rows[0] = False
        length[0] = pixel / fabs(sin_t)
        du[0] = -cos_t / sin_t
        u0[0] = s / (pixel * sin_t) + c - c * du[0]


def forward(const double[:, ::1] img, const double[::1] cos_t, const double[::1] sin_t,
            const double[::1] offsets, double pixel):
    cdef Py_ssize_t n = img.shape[0]
    cdef Py_ssize_t n_ang = cos_t.shape[0]
    cdef Py_ssize_t n_rad = offsets.shape[0]
    out = np.zeros((n_ang, n_rad), dtype=np.float64)
    cdef double[:, ::1] sino = out
    cdef Py_ssize_t a, r, k, j0
    cdef bint by_rows
    cdef double u0, du, length, u, w, acc
    with nogil:
        for a in range(n_ang):
            for r in range(n_rad):
                _setup(cos_t[a], sin_t[a], offsets[r], pixel, <int>n, &by_rows, &u0, &du, &length)
                acc = 0.0
                for k in range(n):
                    u = u0 + k * du
                    j0 = <Py_ssize_t>floor(u)
                    if j0 < -1 or j0 >= n:
                        continue
                    w = u - j0
                    if by_rows:
                        if j0 >= 0:
                            acc = acc + (1.0 - w) * img[k, j0]
                        if j0 + 1 < n:
                            acc = acc + w * img[k, j0 + 1]
                    else:
                        if j0 >= 0:
                            acc = acc + (1.0 - w) * img[j0, k]
                        if j0 + 1 < n:
                            acc = acc + w * img[j0 + 1, k]
                sino[a, r] = length * acc
    return out


def adjoint(const double[:, ::1] sino, const double[::1] cos_t, const double[::1] sin_t,
            const double[::1] offsets, Py_ssize_t n, double pixel):
    cdef Py_ssize_t n_ang = cos_t.shape[0]
    cdef Py_ssize_t n_rad = offsets.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] img = out
    cdef Py_ssize_t a, r, k, j0
    cdef bint by_rows
    cdef double u0, du, length, u, w, val
    with nogil:
        for a in range(n_ang):
            for r in range(n_rad):
                val = sino[a, r]
                if val == 0.0:
                    continue
                _setup(cos_t[a], sin_t[a], offsets[r], pixel, <int>n, &by_rows, &u0, &du, &length)
                val = val * length
                for k in range(n):
                    u = u0 + k * du
                    j0 = <Py_ssize_t>floor(u)
                    if j0 < -1 or j0 >= n:
                        continue
                    w = u - j0
                    if by_rows:
                        if j0 >= 0:
                            img[k, j0] += (1.0 - w) * val
                        if j0 + 1 < n:
                            img[k, j0 + 1] += w * val
                    else:
                        if j0 >= 0:
                            img[j0, k] += (1.0 - w) * val
                        if j0 + 1 < n:
                            img[j0 + 1, k] += w * val
    return out
