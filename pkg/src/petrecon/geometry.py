"""Image and sinogram coordinate systems.

Image pixel ``(i, j)`` sits at ``x = (j - c) * pixel_mm``, ``y = (i - c) * pixel_mm``
with ``c = (n - 1) / 2``; rows run along ``y`` and columns along ``x``.
A line of response with angle ``theta`` and signed offset ``s`` is the set
``x cos(theta) + y sin(theta) = s``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage


class GeometryError(ValueError):
    """Raised for out-of-range indices, shape mismatches and bad parameters."""


@dataclass(frozen=True)
class ImageGrid:
    n: int
    fov_mm: float
    # support radius in pixels; None means n / 2
    support_radius_px: float | None = None

    def __post_init__(self):
        if self.n < 2:
            raise GeometryError(f"image grid needs n >= 2, got {self.n}")
        if not self.fov_mm > 0:
            raise GeometryError(f"fov_mm must be positive, got {self.fov_mm}")
        if self.support_radius_px is not None and not 0 < self.support_radius_px <= self.n / 2:
            raise GeometryError("support_radius_px must lie in (0, n/2]")

    @property
    def pixel_mm(self) -> float:
        return self.fov_mm / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates ``(x, y)`` in mm, each of shape ``(n, n)``."""
        c = (self.n - 1) / 2.0
        axis = (np.arange(self.n) - c) * self.pixel_mm
        y, x = np.meshgrid(axis, axis, indexing="ij")
        return x, y

    def support_mask(self) -> np.ndarray:
        """Boolean mask of the circular reconstruction support."""
        x, y = self.coordinates()
        r_px = self.n / 2.0 if self.support_radius_px is None else self.support_radius_px
        radius = r_px * self.pixel_mm
        return x**2 + y**2 <= radius**2


@dataclass(frozen=True)
class SinogramGeometry:
    n_angles: int
    n_radial: int
    radial_spacing_mm: float
    crop: int = 0

    def __post_init__(self):
        if self.n_angles < 1 or self.n_radial < 1:
            raise GeometryError("sinogram needs at least one angle and one radial bin")
        if not self.radial_spacing_mm > 0:
            raise GeometryError("radial_spacing_mm must be positive")
        if self.crop < 0 or self.n_radial - 2 * self.crop <= 0:
            raise GeometryError(
                f"crop={self.crop} leaves no radial bins out of {self.n_radial}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_radial)

    @property
    def n_kept(self) -> int:
        return self.n_radial - 2 * self.crop

    @property
    def cropped_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_kept)

    def angles(self) -> np.ndarray:
        return np.pi * np.arange(self.n_angles) / self.n_angles

    def offsets(self) -> np.ndarray:
        return (np.arange(self.n_radial) - (self.n_radial - 1) / 2.0) * self.radial_spacing_mm

    def kept_mask(self) -> np.ndarray:
        """Boolean ``(n_angles, n_radial)`` mask of bins surviving the crop."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[:, self.crop : self.n_radial - self.crop] = True
        return mask


@dataclass(frozen=True)
class Lor:
    angle_index: int
    radial_index: int
    theta: float
    offset_mm: float

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def direction(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    def point(self) -> np.ndarray:
        """Point on the line closest to the origin (mm)."""
        return self.offset_mm * self.normal


def lor_of(geom: SinogramGeometry, a: int, r: int) -> Lor:
    if not (0 <= a < geom.n_angles and 0 <= r < geom.n_radial):
        raise GeometryError(
            f"bin ({a}, {r}) outside sinogram {geom.n_angles}x{geom.n_radial}"
        )
    theta = math.pi * a / geom.n_angles
    s = (r - (geom.n_radial - 1) / 2.0) * geom.radial_spacing_mm
    return Lor(int(a), int(r), theta, s)


def crop_sinogram(s: np.ndarray, geom: SinogramGeometry) -> np.ndarray:
    s = np.asarray(s)
    if s.shape[-2:] != geom.shape:
        raise GeometryError(f"sinogram shape {s.shape} does not match {geom.shape}")
    return s[..., geom.crop : geom.n_radial - geom.crop].copy()


def uncrop_sinogram(s: np.ndarray, geom: SinogramGeometry) -> np.ndarray:
    s = np.asarray(s)
    if s.shape[-2:] != geom.cropped_shape:
        raise GeometryError(
            f"cropped sinogram shape {s.shape} does not match {geom.cropped_shape}"
        )
    out = np.zeros(s.shape[:-1] + (geom.n_radial,), dtype=s.dtype)
    out[..., geom.crop : geom.n_radial - geom.crop] = s
    return out


def matched_radial_spacing(grid: ImageGrid, n_angles: int, n_radial: int, crop: int) -> float:
    """Radial bin width for which the support's projection fills exactly the kept bins.

    The projector's interpolation footprint reaches ``pixel * max(|cos|, |sin|)``
    beyond the outermost support pixel. The returned spacing puts every angle's
    footprint edge strictly beyond the last kept bin center and no further than
    the first cropped bin center. Falls back to ``fov / n_kept`` when no such
    spacing exists.
    """
    n_kept = n_radial - 2 * crop
    fallback = grid.fov_mm / n_kept
    if crop == 0 or n_kept % 2 == 0:
        return fallback
    x, y = grid.coordinates()
    mask = grid.support_mask()
    xs, ys = x[mask], y[mask]
    theta = np.pi * np.arange(n_angles) / n_angles
    reach = np.abs(np.outer(np.cos(theta), xs) + np.outer(np.sin(theta), ys)).max(axis=1)
    edge = reach + grid.pixel_mm * np.maximum(np.abs(np.cos(theta)), np.abs(np.sin(theta)))
    half = (n_kept - 1) // 2
    lo = edge.max() / (half + 1)
    hi = edge.min() / half
    if lo >= hi:
        return fallback
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GeometryPreset:
    name: str
    grid: ImageGrid
    sinogram: SinogramGeometry

    def to_dict(self) -> dict:
        return {"name": self.name, "grid": asdict(self.grid), "sinogram": asdict(self.sinogram)}

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryPreset":
        return cls(d["name"], ImageGrid(**d["grid"]), SinogramGeometry(**d["sinogram"]))


def _make_preset(name, n, fov_mm, n_angles, n_radial, crop, support_radius_px):
    grid = ImageGrid(n, fov_mm, support_radius_px)
    spacing = float(matched_radial_spacing(grid, n_angles, n_radial, crop))
    return GeometryPreset(name, grid, SinogramGeometry(n_angles, n_radial, spacing, crop))


# (n, fov_mm, n_angles, n_radial, crop, support_radius_px)
# The paper-scale support is a quarter pixel inside n/2: with the full n/2 disc no
# bin width makes its projection end exactly at the 56-bin crop for all angles.
PRESETS = {
    "paper": (128, 700.0, 288, 381, 56, 63.75),
    "toy": (64, 350.0, 96, 127, 16, 32.0),
}


def preset(name: str) -> GeometryPreset:
    try:
        return _make_preset(name, *PRESETS[name])
    except KeyError:
        raise GeometryError(f"unknown geometry preset {name!r}") from None


# --- phantom-domain augmentation -------------------------------------------


@dataclass(frozen=True)
class Augmentation:
    dx: float = 0.0
    dy: float = 0.0
    rot_deg: float = 0.0
    flip: bool = False

    @property
    def is_identity(self) -> bool:
        return self.dx == 0 and self.dy == 0 and self.rot_deg == 0 and not self.flip


def max_shift_px(n: int) -> float:
    return 25.0 * n / 128.0


MAX_ROTATION_DEG = 10.0


def augment(img: np.ndarray, dx: float = 0.0, dy: float = 0.0, rot: float = 0.0,
            flip: bool = False, support: np.ndarray | None = None) -> np.ndarray:
    """Translate (px), rotate (degrees, about the grid center) and optionally left-right flip.

    Bilinear resampling with zero boundary; output clamped to >= 0 and to the
    inscribed-circle support. Identity parameters return an exact copy.
    """
    img = np.asarray(img)
    n = img.shape[0]
    if img.ndim != 2 or img.shape[1] != n:
        raise GeometryError(f"augment expects a square image, got {img.shape}")
    limit = max_shift_px(n)
    if abs(dx) > limit or abs(dy) > limit:
        raise GeometryError(f"shift ({dx}, {dy}) exceeds +-{limit} px")
    if abs(rot) > MAX_ROTATION_DEG:
        raise GeometryError(f"rotation {rot} exceeds +-{MAX_ROTATION_DEG} deg")
    if dx == 0 and dy == 0 and rot == 0 and not flip:
        return img.copy()

    out = img.astype(np.float64)
    if flip:
        out = out[:, ::-1]
    if dx != 0 or dy != 0 or rot != 0:
        # output pixel o maps to input pixel R^-1 (o - c - t) + c
        t = math.radians(rot)
        cos_t, sin_t = math.cos(t), math.sin(t)
        inv = np.array([[cos_t, -sin_t], [sin_t, cos_t]])  # acting on (row, col)
        c = np.array([(n - 1) / 2.0, (n - 1) / 2.0])
        shift = np.array([dy, dx])
        offset = c - inv @ (c + shift)
        out = ndimage.affine_transform(out, inv, offset=offset, order=1, mode="constant", cval=0.0)
    out = np.clip(out, 0.0, None)
    if support is None:
        support = ImageGrid(n, float(n)).support_mask()
    out[~support] = 0.0
    return out.astype(img.dtype, copy=False)


def draw_augmentation(rng: np.random.Generator, n: int, flip: bool = False) -> Augmentation:
    limit = max_shift_px(n)
    dx, dy = rng.uniform(-limit, limit, size=2)
    rot = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
    return Augmentation(float(dx), float(dy), float(rot), bool(flip))


def apply_augmentation(img: np.ndarray, aug: Augmentation,
                       support: np.ndarray | None = None) -> np.ndarray:
    return augment(img, aug.dx, aug.dy, aug.rot_deg, aug.flip, support)
