import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petrecon.geometry import (Augmentation, GeometryError, ImageGrid, SinogramGeometry, augment,
                               apply_augmentation, crop_sinogram, draw_augmentation, lor_of,
                               max_shift_px, preset, uncrop_sinogram)
from petrecon.phantoms import disc_phantom
from petrecon.projector import SystemOperator


def test_grid_validation():
    with pytest.raises(GeometryError):
        ImageGrid(1, 10.0)
    with pytest.raises(GeometryError):
        ImageGrid(8, 0.0)
    with pytest.raises(GeometryError):
        SinogramGeometry(10, 11, 1.0, crop=6)


def test_support_is_inscribed_disc():
    grid = ImageGrid(64, 64.0)
    mask = grid.support_mask()
    assert mask[32, 32] and not mask[0, 0]
    # area of the inscribed disc, up to pixelization
    assert abs(mask.sum() - math.pi * 32**2) / (math.pi * 32**2) < 0.02


def test_paper_cropped_shape():
    geo = preset("paper")
    assert geo.sinogram.shape == (288, 381)
    assert geo.sinogram.cropped_shape == (288, 269)
    assert crop_sinogram(np.zeros((288, 381)), geo.sinogram).shape == (288, 269)


def test_lor_examples():
    geom = SinogramGeometry(8, 9, 1.5)
    center = lor_of(geom, 0, 4)
    assert center.theta == 0 and center.offset_mm == 0
    np.testing.assert_allclose(center.direction, [0, 1], atol=1e-15)
    quarter = lor_of(geom, 4, 4)
    assert quarter.theta == pytest.approx(math.pi / 2)
    assert quarter.offset_mm == 0
    assert lor_of(geom, 0, 5).offset_mm == pytest.approx(1.5)
    with pytest.raises(GeometryError):
        lor_of(geom, 8, 0)
    with pytest.raises(GeometryError):
        lor_of(geom, 0, -1)


def test_lor_bijection():
    geom = SinogramGeometry(16, 21, 0.7)
    params = {(round(lor.theta, 12), round(lor.offset_mm, 12))
              for lor in (lor_of(geom, a, r) for a in range(16) for r in range(21))}
    assert len(params) == 16 * 21


def test_crop_identity_when_zero():
    geom = SinogramGeometry(5, 7, 1.0, crop=0)
    s = np.arange(35.0).reshape(5, 7)
    np.testing.assert_array_equal(crop_sinogram(s, geom), s)


@given(st.integers(1, 6), st.integers(0, 4), st.integers(1, 9))
def test_crop_uncrop_roundtrip(n_angles, crop, kept):
    geom = SinogramGeometry(n_angles, kept + 2 * crop, 1.0, crop)
    s = np.random.default_rng(kept).random(geom.cropped_shape)
    np.testing.assert_array_equal(crop_sinogram(uncrop_sinogram(s, geom), geom), s)


@pytest.mark.parametrize("name", ["toy", "paper"])
def test_support_projection_fills_exactly_the_kept_bins(name):
    geo = preset(name)
    opr = SystemOperator(geo.grid, geo.sinogram)
    sino = opr.forward(geo.grid.support_mask().astype(float))
    kept = geo.sinogram.kept_mask()
    assert sino[kept].min() > 0
    assert np.all(sino[~kept] == 0)
    # uncrop(crop(s)) restores a sinogram supported in the kept bins
    np.testing.assert_array_equal(uncrop_sinogram(crop_sinogram(sino, geo.sinogram), geo.sinogram), sino)


def test_augment_identity_is_bit_exact(rng):
    img = rng.random((32, 32)).astype(np.float32)
    out = augment(img)
    assert out is not img
    np.testing.assert_array_equal(out, img)


def test_flip_twice_is_identity(rng):
    grid = ImageGrid(32, 32.0)
    img = rng.random((32, 32)) * grid.support_mask()
    once = augment(img, flip=True, support=grid.support_mask())
    np.testing.assert_array_equal(augment(once, flip=True, support=grid.support_mask()), img)


def test_augment_preserves_disc_activity():
    grid = ImageGrid(64, 64.0)
    disc = disc_phantom(grid, 12.0)
    out = augment(disc, dx=4.3, dy=-2.7, rot=7.0, support=grid.support_mask())
    assert abs(out.sum() - disc.sum()) / disc.sum() < 0.02


def _rotation_roundtrip_mae(rot):
    grid = ImageGrid(64, 64.0)
    disc = disc_phantom(grid, 14.0)
    back = augment(augment(disc, rot=rot), rot=-rot)
    return np.mean(np.abs(back - disc)) / disc.max()


@pytest.mark.xfail(strict=True, reason="two bilinear resamplings blur the disc edge: "
                   "measured MAE ~6e-3 of max at any angle, above the 1e-3 target")
def test_rotation_roundtrip_target_tolerance():
    assert _rotation_roundtrip_mae(8.0) < 1e-3


def test_rotation_roundtrip_measured_bound():
    # regression guard at the measured level; the error is edge blur, not drift
    for rot in (2.0, 8.0):
        assert _rotation_roundtrip_mae(rot) < 1e-2


def test_augment_limits():
    img = np.zeros((64, 64))
    with pytest.raises(GeometryError):
        augment(img, dx=max_shift_px(64) + 0.1)
    with pytest.raises(GeometryError):
        augment(img, rot=10.5)
    with pytest.raises(GeometryError):
        augment(np.zeros((4, 5)), dx=1)


def test_augment_output_nonnegative_and_supported(rng):
    grid = ImageGrid(32, 32.0)
    img = rng.random((32, 32))
    aug = draw_augmentation(rng, 32, flip=True)
    out = apply_augmentation(img, aug, grid.support_mask())
    assert out.min() >= 0
    assert np.all(out[~grid.support_mask()] == 0)
    assert Augmentation().is_identity and not aug.is_identity


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-10, 10))
def test_augment_property_nonnegative(dx, dy, rot):
    img = np.random.default_rng(0).random((32, 32))
    assert augment(img, dx, dy, rot).min() >= 0
