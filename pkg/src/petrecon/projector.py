"""Linear PET system model: Joseph ray tracing, matched adjoint, Gaussian PSF."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import kernels
from .geometry import GeometryError, ImageGrid, SinogramGeometry

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def gaussian_kernel(fwhm_mm: float, spacing_mm: float) -> np.ndarray:
    """Unit-sum 1-D Gaussian sampled on the grid, truncated at +-4 sigma."""
    sigma = fwhm_mm * FWHM_TO_SIGMA / spacing_mm
    radius = max(1, int(math.ceil(4.0 * sigma)))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (k / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(x: np.ndarray, fwhm_mm: float, spacing_mm: float, axes=None,
                  mode: str = "nearest") -> np.ndarray:
    """Separable Gaussian blur of ``x`` along ``axes`` (default: all axes).

    ``mode`` is passed to :func:`scipy.ndimage.convolve1d`; ``"constant"`` gives
    a symmetric (self-adjoint) operator, ``"nearest"`` preserves constants.
    """
    if fwhm_mm < 0:
        raise GeometryError(f"fwhm must be >= 0, got {fwhm_mm}")
    x = np.asarray(x, dtype=np.float64)
    if fwhm_mm == 0:
        return x.copy()
    kernel = gaussian_kernel(fwhm_mm, spacing_mm)
    if axes is None:
        axes = range(x.ndim)
    out = x
    for ax in axes:
        out = ndimage.convolve1d(out, kernel, axis=ax, mode=mode, cval=0.0)
    return out


@dataclass(frozen=True, eq=False)
class SystemOperator:
    """``A f = sensitivity * atten * P(support * blur(f))`` with P the Joseph projector.

    ``atten`` (full-size sinogram of survival probabilities) is optional; with
    it the operator is the attenuated system model used inside MLEM/OSEM.
    ``sensitivity`` converts activity times path length (mm) into expected
    counts and so fixes the activity unit of every image the model touches.
    """

    grid: ImageGrid
    geom: SinogramGeometry
    psf_fwhm_mm: float = 0.0
    atten: np.ndarray | None = None
    sensitivity: float = 1.0
    _cos: np.ndarray = field(init=False, repr=False)
    _sin: np.ndarray = field(init=False, repr=False)
    _offsets: np.ndarray = field(init=False, repr=False)
    _support: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.psf_fwhm_mm < 0:
            raise GeometryError("psf_fwhm_mm must be >= 0")
        if not self.sensitivity > 0:
            raise GeometryError("sensitivity must be positive")
        theta = self.geom.angles()
        object.__setattr__(self, "_cos", np.ascontiguousarray(np.cos(theta)))
        object.__setattr__(self, "_sin", np.ascontiguousarray(np.sin(theta)))
        object.__setattr__(self, "_offsets", np.ascontiguousarray(self.geom.offsets()))
        object.__setattr__(self, "_support", self.grid.support_mask())
        if self.atten is not None:
            atten = np.asarray(self.atten, dtype=np.float64)
            if atten.shape != self.geom.shape:
                raise GeometryError(f"attenuation shape {atten.shape} != {self.geom.shape}")
            object.__setattr__(self, "atten", atten)

    @property
    def support(self) -> np.ndarray:
        return self._support

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def sino_shape(self) -> tuple[int, int]:
        return self.geom.shape

    def with_attenuation(self, atten: np.ndarray | None) -> "SystemOperator":
        return replace(self, atten=atten)

    def without_psf(self) -> "SystemOperator":
        return replace(self, psf_fwhm_mm=0.0, atten=None)

    def geometric(self) -> "SystemOperator":
        """Plain line integrals in mm: no PSF, attenuation or sensitivity."""
        return replace(self, psf_fwhm_mm=0.0, atten=None, sensitivity=1.0)

    def _select(self, angles):
        if angles is None:
            return self._cos, self._sin, slice(None)
        angles = np.asarray(angles, dtype=np.intp)
        return np.ascontiguousarray(self._cos[angles]), np.ascontiguousarray(self._sin[angles]), angles

    def _blur(self, img):
        if self.psf_fwhm_mm == 0:
            return img
        return gaussian_blur(img, self.psf_fwhm_mm, self.grid.pixel_mm, mode="constant")

    def forward(self, f: np.ndarray, angles=None) -> np.ndarray:
        """Line integrals of ``f`` (activity x mm) for all angles or the given angle indices."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape != self.grid.shape:
            raise GeometryError(f"image shape {f.shape} does not match grid {self.grid.shape}")
        cos_t, sin_t, sel = self._select(angles)
        img = np.ascontiguousarray(self._blur(f) * self._support)
        sino = kernels.joseph_forward(img, cos_t, sin_t, self._offsets, self.grid.pixel_mm)
        if self.atten is not None:
            sino *= self.atten[sel]
        if self.sensitivity != 1.0:
            sino *= self.sensitivity
        return sino

    def adjoint(self, g: np.ndarray, angles=None) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        cos_t, sin_t, sel = self._select(angles)
        expected = (len(cos_t), self.geom.n_radial)
        if g.shape != expected:
            raise GeometryError(f"sinogram shape {g.shape} does not match {expected}")
        if self.atten is not None:
            g = g * self.atten[sel]
        if self.sensitivity != 1.0:
            g = g * self.sensitivity
        img = kernels.joseph_adjoint(np.ascontiguousarray(g), cos_t, sin_t, self._offsets,
                                     self.grid.n, self.grid.pixel_mm)
        return self._blur(img * self._support)


class MatrixOperator:
    """Explicit-matrix operator with the same calling convention as :class:`SystemOperator`.

    ``matrix`` has shape ``(n_angles * n_radial, n_pixels)``; ``angles`` selects
    whole sinogram rows.
    """

    def __init__(self, matrix, image_shape, sino_shape, support=None):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.image_shape = tuple(image_shape)
        self.sino_shape = tuple(sino_shape)
        if self.matrix.shape != (int(np.prod(self.sino_shape)), int(np.prod(self.image_shape))):
            raise GeometryError("matrix shape does not match image and sinogram shapes")
        self.support = np.ones(self.image_shape, bool) if support is None else support

    def _rows(self, angles):
        m = self.matrix.reshape(self.sino_shape + (-1,))
        return m if angles is None else m[np.asarray(angles, dtype=np.intp)]

    def forward(self, f, angles=None):
        rows = self._rows(angles)
        return (rows.reshape(-1, rows.shape[-1]) @ np.ravel(f)).reshape(rows.shape[:2])

    def adjoint(self, g, angles=None):
        rows = self._rows(angles)
        return (rows.reshape(-1, rows.shape[-1]).T @ np.ravel(g)).reshape(self.image_shape)


def dense_matrix(opr: SystemOperator) -> np.ndarray:
    """Explicit system matrix (rows = sinogram bins, columns = pixels) by projecting unit images."""
    n = opr.grid.n
    cols = []
    basis = np.zeros((n, n))
    for p in range(n * n):
        basis.flat[p] = 1.0
        cols.append(opr.forward(basis).ravel())
        basis.flat[p] = 0.0
    return np.stack(cols, axis=1)


def dump_dense(opr: SystemOperator, path) -> tuple[int, int]:
    """Write the dense matrix as raw little-endian float64, row-major; returns its shape."""
    mat = dense_matrix(opr)
    mat.astype("<f8").tofile(path)
    return mat.shape
