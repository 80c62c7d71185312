# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter for 3x3, padding-1 convolutions on NHWC arrays.

Mirrors ``petrecon._conv_py``.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.string cimport memcpy, memset

cnp.import_array()


def im2col(const floating[:, :, :, ::1] x, int stride, floating[:, ::1] cols):
    """Fill ``cols`` (N*Ho*Wo, 9*C) with zero-padded 3x3 patches of ``x``."""
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = (h + stride - 1) // stride, wo = (w + stride - 1) // stride
    cdef Py_ssize_t b, i, j, ki, kj, r, yy, xx, off
    cdef size_t nbytes = c * sizeof(floating)
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    r = (b * ho + i) * wo + j
                    for ki in range(3):
                        yy = i * stride + ki - 1
                        for kj in range(3):
                            xx = j * stride + kj - 1
                            off = (ki * 3 + kj) * c
                            if 0 <= yy < h and 0 <= xx < w:
                                memcpy(&cols[r, off], &x[b, yy, xx, 0], nbytes)
                            else:
                                memset(&cols[r, off], 0, nbytes)


def col2im(const floating[:, ::1] dcols, int stride, floating[:, :, :, ::1] dx):
    """Scatter-add patch gradients back into ``dx`` (zeroed by the caller)."""
    cdef Py_ssize_t n = dx.shape[0], h = dx.shape[1], w = dx.shape[2], c = dx.shape[3]
    cdef Py_ssize_t ho = (h + stride - 1) // stride, wo = (w + stride - 1) // stride
    cdef Py_ssize_t b, i, j, ki, kj, r, yy, xx, off, ch
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    r = (b * ho + i) * wo + j
                    for ki in range(3):
                        yy = i * stride + ki - 1
                        if yy < 0 or yy >= h:
                            continue
                        for kj in range(3):
                            xx = j * stride + kj - 1
                            if xx < 0 or xx >= w:
                                continue
                            off = (ki * 3 + kj) * c
                            for ch in range(c):
                                dx[b, yy, xx, ch] += dcols[r, off + ch]
