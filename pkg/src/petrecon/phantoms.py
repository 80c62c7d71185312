"""Procedural 2-D activity/attenuation phantom pairs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ImageGrid

MU_WATER = 0.0096  # 1/mm at 511 keV
MU_LUNG = 0.003


@dataclass
class Phantom:
    phantom_id: int
    activity: np.ndarray
    mu_map: np.ndarray


def _ellipse(x, y, cx, cy, a, b, phi):
    c, s = math.cos(phi), math.sin(phi)
    u = (x - cx) * c + (y - cy) * s
    v = -(x - cx) * s + (y - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _fine_coordinates(grid: ImageGrid, oversample: int):
    m = grid.n * oversample
    c = (m - 1) / 2.0
    axis = (np.arange(m) - c) * grid.pixel_mm / oversample
    y, x = np.meshgrid(axis, axis, indexing="ij")
    return x, y


def _downsample(img, oversample):
    n = img.shape[0] // oversample
    return img.reshape(n, oversample, n, oversample).mean(axis=(1, 3))


def make_phantom(grid: ImageGrid, rng: np.random.Generator, phantom_id: int = 0,
                 oversample: int = 4) -> Phantom:
    """Warm elliptical body with 3-10 hot/cold ellipses and an optional lung-like insert.

    Activity is in arbitrary Bq/cc-like units (background ~1); the attenuation map
    is water inside the body and lung-like in the insert. Both are area-weighted
    over ``oversample``^2 sub-pixels and zero outside the support.
    """
    x, y = _fine_coordinates(grid, oversample)
    r_sup = (grid.n / 2.0 if grid.support_radius_px is None else grid.support_radius_px)
    r_sup *= grid.pixel_mm

    a = rng.uniform(0.55, 0.85) * r_sup
    b = rng.uniform(0.45, 0.8) * r_sup
    phi = rng.uniform(0, math.pi)
    room = 0.92 * r_sup - max(a, b)
    cx, cy = rng.uniform(-1, 1, size=2) * max(room, 0.0) / math.sqrt(2)
    body = _ellipse(x, y, cx, cy, a, b, phi)

    background = rng.uniform(0.6, 1.4)
    act = np.where(body, background, 0.0)
    mu = np.where(body, MU_WATER, 0.0)

    def inside_point(scale):
        # a point inside the body ellipse, in body coordinates scaled by ``scale``
        r = math.sqrt(rng.uniform(0, 1)) * scale
        t = rng.uniform(0, 2 * math.pi)
        u, v = a * r * math.cos(t), b * r * math.sin(t)
        c, s = math.cos(phi), math.sin(phi)
        return cx + u * c - v * s, cy + u * s + v * c

    if rng.uniform() < 0.5:
        lx, ly = inside_point(0.5)
        la, lb = rng.uniform(0.15, 0.3) * a, rng.uniform(0.2, 0.4) * b
        lung = _ellipse(x, y, lx, ly, la, lb, rng.uniform(0, math.pi)) & body
        act = np.where(lung, 0.25 * background, act)
        mu = np.where(lung, MU_LUNG, mu)

    for _ in range(int(rng.integers(3, 11))):
        ex, ey = inside_point(0.75)
        ea = rng.uniform(0.05, 0.22) * r_sup
        eb = rng.uniform(0.4, 1.0) * ea
        blob = _ellipse(x, y, ex, ey, ea, eb, rng.uniform(0, math.pi)) & body
        level = background * (rng.uniform(0.0, 0.5) if rng.uniform() < 0.25 else rng.uniform(1.5, 5.0))
        act = np.where(blob, level, act)

    support = grid.support_mask()
    act = _downsample(act, oversample) * support
    mu = _downsample(mu, oversample) * support
    return Phantom(phantom_id, act, mu)


def make_phantoms(grid: ImageGrid, count: int, seed: int) -> list[Phantom]:
    return [
        make_phantom(grid, np.random.default_rng(np.random.SeedSequence([seed, pid])), pid)
        for pid in range(count)
    ]


def disc_phantom(grid: ImageGrid, radius_mm: float, value: float = 1.0,
                 oversample: int = 8) -> np.ndarray:
    """Centered uniform disc, area-weighted at the edge."""
    x, y = _fine_coordinates(grid, oversample)
    fine = (x**2 + y**2 <= radius_mm**2).astype(np.float64) * value
    return _downsample(fine, oversample)
