"""Classical baselines: ramp-filtered back-projection and unregularized MLEM/OSEM."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, uncrop_sinogram
from .projector import SystemOperator, gaussian_blur

POSTFILTER_FWHM_MM = 6.4


class ReconstructionError(RuntimeError):
    pass


@dataclass
class FbpConfig:
    postfilter_fwhm_mm: float = POSTFILTER_FWHM_MM
    postfilter: bool = True


@dataclass
class OsemConfig:
    iterations: int = 5
    subsets: int = 16
    postfilter_fwhm_mm: float = POSTFILTER_FWHM_MM
    postfilter: bool = True
    eps: float = 1e-12  # relative guard for divisions
    # PSF assumed by the reconstruction model; 0 leaves a deliberate mismatch
    # with the blur used to simulate the data, as with a real scanner
    model_psf_fwhm_mm: float = 0.0

    def __post_init__(self):
        if self.iterations < 1 or self.subsets < 1:
            raise ReconstructionError("iterations and subsets must be >= 1")


def _postfilter(img, fwhm_mm, opr):
    img = gaussian_blur(img, fwhm_mm, opr.grid.pixel_mm, mode="constant")
    return img * opr.support


def ramp_kernel(n: int, spacing: float) -> np.ndarray:
    """Band-limited (Ram-Lak) ramp filter taps for lags ``-(n-1) .. n-1``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.shape)
    h[k == 0] = 1.0 / (4.0 * spacing**2)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return h


def ramp_filter(sino: np.ndarray, spacing: float) -> np.ndarray:
    """Linear (zero-padded) convolution of every angular row with the ramp kernel, times the bin width."""
    n = sino.shape[-1]
    h = ramp_kernel(n, spacing)
    size = 1 << int(np.ceil(np.log2(3 * n - 2)))
    spec = np.fft.rfft(sino, size, axis=-1) * np.fft.rfft(h, size)
    full = np.fft.irfft(spec, size, axis=-1)
    return full[..., n - 1 : 2 * n - 1] * spacing


def fbp(g_hat: np.ndarray, opr: SystemOperator, cfg: FbpConfig | None = None) -> np.ndarray:
    """Reconstruct from a precorrected, cropped sinogram."""
    cfg = cfg or FbpConfig()
    geom = opr.geom
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if g_hat.shape != geom.cropped_shape:
        raise GeometryError(f"expected cropped sinogram {geom.cropped_shape}, got {g_hat.shape}")
    q = uncrop_sinogram(ramp_filter(g_hat, geom.radial_spacing_mm), geom)
    # adjoint(q) ~ (pixel^2 / bin width) * sum over angles of q(x cos + y sin)
    back = opr.geometric().adjoint(q)
    img = back * (np.pi / geom.n_angles) * geom.radial_spacing_mm / opr.grid.pixel_mm**2
    img /= opr.sensitivity
    if cfg.postfilter and cfg.postfilter_fwhm_mm > 0:
        img = _postfilter(img, cfg.postfilter_fwhm_mm, opr)
    return img * opr.support


def sensitivity(opr, angles=None) -> np.ndarray:
    """``A^T 1`` over all angles or the given angle indices."""
    n_rows, n_radial = opr.sino_shape
    if angles is not None:
        n_rows = len(angles)
    return opr.adjoint(np.ones((n_rows, n_radial)), angles)


def mlem_update(f: np.ndarray, g: np.ndarray, gamma: np.ndarray, opr, sens=None,
                angles=None, eps: float = 1e-12) -> np.ndarray:
    """One EM step ``f * A^T(g / (A f + gamma)) / A^T 1`` (restricted to ``angles`` if given)."""
    f = np.asarray(f, dtype=np.float64)
    if sens is None:
        sens = opr.adjoint(np.ones(np.shape(g)), angles)
    support = opr.support
    smax = sens.max()
    if smax <= 0 or np.any(sens[support] <= eps * smax):
        raise ReconstructionError("sensitivity image vanishes inside the support")
    expected = opr.forward(f, angles) + gamma
    floor = eps * max(expected.max(), np.finfo(float).tiny)
    ratio = np.asarray(g, dtype=np.float64) / np.maximum(expected, floor)
    back = opr.adjoint(ratio, angles)
    out = np.zeros_like(f)
    live = sens > eps * smax
    out[live] = f[live] * back[live] / sens[live]
    return out


def initial_image(g, opr, sens) -> np.ndarray:
    """Uniform start on the support scaled so that its projection carries the total counts."""
    support = opr.support
    level = float(np.sum(g)) / (support.sum() * sens[support].mean())
    return np.where(support, max(level, 1e-12), 0.0)


def subset_angles(n_angles: int, subsets: int) -> list[np.ndarray]:
    if n_angles % subsets:
        raise ReconstructionError(f"{n_angles} angles not divisible into {subsets} subsets")
    return [np.arange(j, n_angles, subsets) for j in range(subsets)]


def osem(g: np.ndarray, gamma: np.ndarray, opr, cfg: OsemConfig | None = None,
         order=None, callback=None) -> np.ndarray:
    """Ordered-subsets EM on uncorrected counts with additive mean ``gamma``.

    ``opr`` should carry the attenuation factors. Subset ``j`` holds the angles
    congruent to ``j`` modulo the subset count; ``order`` permutes the visiting
    order. ``callback(iteration, image)`` runs after every full pass, before
    post-filtering.
    """
    cfg = cfg or OsemConfig()
    g = np.asarray(g, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    n_angles = g.shape[0]
    if cfg.subsets == 1:
        groups = [None]
    else:
        groups = subset_angles(n_angles, cfg.subsets)
    sens = [sensitivity(opr, a) for a in groups]
    f = initial_image(g, opr, sum(sens))
    order = range(len(groups)) if order is None else list(order)
    for it in range(cfg.iterations):
        for j in order:
            a = groups[j]
            gj = g if a is None else g[a]
            cj = gamma if a is None else gamma[a]
            f = mlem_update(f, gj, cj, opr, sens[j], a, cfg.eps)
        if callback is not None:
            callback(it + 1, f)
    if cfg.postfilter and cfg.postfilter_fwhm_mm > 0:
        f = _postfilter(f, cfg.postfilter_fwhm_mm, opr)
    return f


def mlem(g, gamma, opr, iterations: int, callback=None) -> np.ndarray:
    """Plain MLEM without post-filter."""
    return osem(g, gamma, opr, OsemConfig(iterations=iterations, subsets=1, postfilter=False),
                callback=callback)
