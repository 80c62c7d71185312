"""Forward/backward kernels for the encoder-decoder.

Tensors are numpy arrays in channels-last layout ``(N, H, W, C)``; conv kernels
are ``(3, 3, Cin, Cout)``.

Every op works in the dtype of its inputs, so the same code serves float32
training and float64 gradient checks. Forward functions return ``(out, cache)``;
backward functions take the upstream gradient and that cache.
"""
from __future__ import annotations

import numpy as np

from .. import kernels


class ShapeError(ValueError):
    pass


def conv_out_size(n: int, stride: int) -> int:
    return -(-n // stride)


# --- 3x3 convolution, padding 1, stride 1 or 2 --------------------------------

def _check_conv(x, w):
    if x.ndim != 4 or w.ndim != 4 or w.shape[:2] != (3, 3):
        raise ShapeError(f"expected NHWC input and (3, 3, Cin, Cout) kernel, got {x.shape}, {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {w.shape[2]}")


def conv2d_forward(x, w, b=None, stride: int = 1):
    """Cross-correlation with a 3x3 kernel bank; output size ``ceil(in / stride)``."""
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    _check_conv(x, w)
    x = np.ascontiguousarray(x)
    n, h, wd, c = x.shape
    ho, wo = conv_out_size(h, stride), conv_out_size(wd, stride)
    cols = np.empty((n * ho * wo, 9 * c), dtype=x.dtype)
    kernels.im2col(x, stride, cols)
    out = cols @ w.reshape(9 * c, -1)
    if b is not None:
        out += b
    return out.reshape(n, ho, wo, -1), (cols, x.shape, w, stride, b is not None)


def conv2d_backward(dy, cache):
    """Returns ``(dx, dw, db)``; ``db`` is None for a bias-free conv."""
    cols, x_shape, w, stride, has_bias = cache
    c = x_shape[3]
    dy2 = dy.reshape(cols.shape[0], -1)
    dw = (cols.T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0) if has_bias else None
    dcols = np.ascontiguousarray(dy2 @ w.reshape(9 * c, -1).T)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    kernels.col2im(dcols, stride, dx)
    return dx, dw, db


# --- batch normalization -----------------------------------------------------

BN_EPS = 1e-5
_STAT_AXES = (0, 1, 2)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, momentum=0.2,
                      train=True, eps=BN_EPS):
    """Per-channel normalization.

    In train mode the running statistics are updated in place as
    ``running = (1 - momentum) * running + momentum * batch`` (unbiased batch
    variance for the running estimate).
    """
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batch normalization in train mode needs batch size >= 2")
        m = x.shape[0] * x.shape[1] * x.shape[2]
        mean = x.mean(axis=_STAT_AXES)
        var = x.var(axis=_STAT_AXES)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype)) * inv_std
    return xhat * gamma + beta, (xhat, inv_std, gamma, train)


def batchnorm_backward(dy, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, train = cache
    dbeta = dy.sum(axis=_STAT_AXES)
    dgamma = (dy * xhat).sum(axis=_STAT_AXES)
    scale = gamma * inv_std
    if not train:
        return dy * scale, dgamma, dbeta
    m = dy.shape[0] * dy.shape[1] * dy.shape[2]
    dx = (scale / m) * (m * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


# --- activations, resampling, loss ---------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``(n_out, n_in)`` interpolation weights, half-pixel-centered, edge-clamped."""
    if n_out < n_in:
        raise ShapeError(f"bilinear upsampling cannot shrink {n_in} -> {n_out}")
    dst = np.arange(n_out)
    src = np.maximum((dst + 0.5) * n_in / n_out - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (dst, i0), 1.0 - frac)
    np.add.at(m, (dst, i1), frac)
    return m.astype(dtype)


def _resample(x, mh, mw):
    n, h, w, c = x.shape
    rows = (mh @ x.reshape(n, h, w * c)).reshape(n * mh.shape[0], w, c)
    return (mw @ rows).reshape(n, mh.shape[0], mw.shape[0], c)


def upsample_forward(x, out_h: int, out_w: int):
    mh = bilinear_matrix(x.shape[1], out_h, x.dtype)
    mw = bilinear_matrix(x.shape[2], out_w, x.dtype)
    return _resample(x, mh, mw), (mh, mw)


def upsample_backward(dy, cache):
    mh, mw = cache
    return _resample(dy, mh.T, mw.T)


def mse_loss(x, y):
    """Mean squared error and its gradient with respect to ``x``."""
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    diff = x - y
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    return loss, (2.0 / diff.size) * diff
