"""Numpy patch gather/scatter for 3x3, padding-1 convolutions on NHWC arrays."""
import numpy as np


def _window(k, stride, n_out):
    return slice(k, k + stride * (n_out - 1) + 1, stride)


def im2col(x, stride, cols):
    n, h, w, c = x.shape
    ho, wo = -(-h // stride), -(-w // stride)
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1 : h + 1, 1 : w + 1] = x
    view = cols.reshape(n, ho, wo, 3, 3, c)
    for ki in range(3):
        for kj in range(3):
            view[:, :, :, ki, kj] = xp[:, _window(ki, stride, ho), _window(kj, stride, wo)]


def col2im(dcols, stride, dx):
    n, h, w, c = dx.shape
    ho, wo = -(-h // stride), -(-w // stride)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dx.dtype)
    view = dcols.reshape(n, ho, wo, 3, 3, c)
    for ki in range(3):
        for kj in range(3):
            dxp[:, _window(ki, stride, ho), _window(kj, stride, wo)] += view[:, :, :, ki, kj]
    dx += dxp[:, 1 : h + 1, 1 : w + 1]
