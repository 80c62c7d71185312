"""Pure numpy Joseph projector, used when the compiled kernel is unavailable.

Vectorized over radial bins and the stepping axis, one angle at a time.
"""
import numpy as np


def _setup(cos_t, sin_t, s, pixel, n):
    c = (n - 1) / 2.0
    by_rows = abs(cos_t) >= abs(sin_t)
    if by_rows:
        length = pixel / abs(cos_t)
        du = -sin_t / cos_t
        u0 = s / (pixel * cos_t) + c - c * du
    else:
        length = pixel / abs(sin_t)
        du = -cos_t / sin_t
        u0 = s / (pixel * sin_t) + c - c * du
    return by_rows, u0, du, length


def _footprint(cos_t, sin_t, offsets, pixel, n):
    """Flat pixel indices and weights of every (radial bin, step, corner) sample."""
    by_rows, u0, du, length = _setup(cos_t, sin_t, offsets, pixel, n)
    k = np.arange(n)
    u = u0[:, None] + k[None, :] * du
    j0 = np.floor(u).astype(np.int64)
    w = u - j0
    kk = np.broadcast_to(k, u.shape)
    idx, wts = [], []
    for j, wt in ((j0, 1.0 - w), (j0 + 1, w)):
        valid = (j >= 0) & (j < n)
        jc = np.where(valid, j, 0)
        flat = kk * n + jc if by_rows else jc * n + kk
        idx.append(flat)
        wts.append(np.where(valid, wt, 0.0) * length)
    return np.stack(idx, axis=-1), np.stack(wts, axis=-1)


def forward(img, cos_t, sin_t, offsets, pixel):
    n = img.shape[0]
    flat = np.ascontiguousarray(img, dtype=np.float64).ravel()
    out = np.empty((len(cos_t), len(offsets)))
    for a in range(len(cos_t)):
        idx, wts = _footprint(cos_t[a], sin_t[a], offsets, pixel, n)
        out[a] = (flat[idx] * wts).sum(axis=(1, 2))
    return out


def adjoint(sino, cos_t, sin_t, offsets, n, pixel):
    out = np.zeros(n * n)
    for a in range(len(cos_t)):
        idx, wts = _footprint(cos_t[a], sin_t[a], offsets, pixel, n)
        out += np.bincount(idx.ravel(), weights=(wts * sino[a][:, None, None]).ravel(),
                           minlength=n * n)
    return out.reshape(n, n)
