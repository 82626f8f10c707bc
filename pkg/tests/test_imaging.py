import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rlnloc.imaging import (
    AffineTransform2D,
    EmptyMaskError,
    InvalidTransformError,
    LabelRangeError,
    apply_to_point,
    as_mask,
    center_of_mass,
    clamp_point,
    compose,
    crop_patch,
    dice,
    joint_histogram,
    label_entropy,
    mutual_information,
    resample_mask,
    warped_joint_histogram,
)

masks = arrays(np.uint8, st.tuples(st.integers(2, 12), st.integers(2, 12)), elements=st.integers(0, 3))


def rot(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def translation(tx, ty):
    return AffineTransform2D(np.eye(2), (tx, ty))


# -- transforms -----------------------------------------------------------------

def test_apply_to_point_examples():
    assert apply_to_point(AffineTransform2D.identity(), (12.5, 40)) == (12.5, 40)
    x, y = apply_to_point(AffineTransform2D(rot(90), (0, 0)), (1, 0))
    assert abs(x) < 1e-12 and abs(y - 1) < 1e-12
    assert apply_to_point(AffineTransform2D(np.diag([2.0, 2.0]), (1, 1)), (3, 4)) == (7, 9)


def test_compose_identity_is_exact():
    t = AffineTransform2D(rot(17) * 1.3, (2.25, -7.5))
    i = AffineTransform2D.identity()
    assert compose(i, t) == t
    assert compose(t, i) == t


@settings(max_examples=60, deadline=None)
@given(st.floats(-180, 180), st.floats(0.5, 2), st.floats(-50, 50), st.floats(-50, 50),
       st.floats(-180, 180), st.floats(-100, 100), st.floats(-100, 100))
def test_compose_matches_sequential_application(a1, s1, tx, ty, a2, px, py):
    t1 = AffineTransform2D(rot(a1) * s1, (tx, ty))
    t2 = AffineTransform2D(rot(a2), (ty, tx))
    direct = apply_to_point(compose(t2, t1), (px, py))
    seq = apply_to_point(t2, apply_to_point(t1, (px, py)))
    assert np.allclose(direct, seq, atol=1e-9, rtol=0)


def test_transform_is_immutable_and_hashable():
    t = AffineTransform2D(np.eye(2), (1, 2))
    with pytest.raises(ValueError):
        t.linear[0, 0] = 5
    assert hash(t) == hash(AffineTransform2D(np.eye(2), (1, 2)))


def test_inverse_round_trip():
    t = AffineTransform2D(rot(30) @ np.diag([1.5, 0.7]), (4, -9))
    p = apply_to_point(t.inverse(), apply_to_point(t, (11.0, -3.0)))
    assert np.allclose(p, (11, -3), atol=1e-12)


def test_singular_transform_rejected():
    t = AffineTransform2D(np.array([[1.0, 2.0], [2.0, 4.0]]), (0, 0))
    assert not t.is_invertible()
    with pytest.raises(InvalidTransformError):
        resample_mask(np.zeros((4, 4), np.uint8), t)
    with pytest.raises(InvalidTransformError):
        t.inverse()


# -- resampling -----------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(masks)
def test_resample_identity_is_exact(m):
    out = resample_mask(m, AffineTransform2D.identity())
    assert np.array_equal(out, m) and out is not m


def test_resample_single_pixel_translation():
    m = np.zeros((32, 32), np.uint8)
    m[10, 10] = 1
    out = resample_mask(m, translation(5, 3))
    assert np.argwhere(out).tolist() == [[13, 15]]
    assert out[13, 15] == 1


def test_resample_out_of_bounds_clears():
    m = np.full((16, 16), 2, np.uint8)
    assert not resample_mask(m, translation(40, 0)).any()


def test_resample_rotation_by_90_about_center_is_exact():
    m = np.zeros((9, 9), np.uint8)
    m[1, 4] = 3
    m[2:4, 6] = 1
    c = np.array([4.0, 4.0])
    r = np.round(rot(90))
    out = resample_mask(m, AffineTransform2D(r, c - r @ c))
    assert np.array_equal(out, np.rot90(m, k=-1))


@settings(max_examples=40, deadline=None)
@given(masks, st.floats(-3, 3), st.floats(-3, 3))
def test_resample_keeps_shape_and_labels(m, tx, ty):
    out = resample_mask(m, AffineTransform2D(rot(tx * 10), (tx, ty)))
    assert out.shape == m.shape and out.dtype == np.uint8 and out.max() <= 3


def test_warped_histogram_matches_resample_then_count(phantom):
    mask = phantom[0]
    t = AffineTransform2D(rot(7) @ np.diag([1.1, 0.9]), (5.5, -3.25))
    fixed = resample_mask(mask, translation(2, 1))
    assert np.array_equal(warped_joint_histogram(mask, fixed, t), joint_histogram(resample_mask(mask, t), fixed))


# -- dice and mutual information --------------------------------------------------

def test_dice_examples():
    a = np.zeros((8, 8), np.uint8)
    a[1:3, 1:3] = 1
    b = np.zeros((8, 8), np.uint8)
    b[1:3, 2:4] = 1
    assert dice(a, b) == pytest.approx((0.5 + 1 + 1) / 3, abs=1e-15)
    full = np.array([[1, 2], [3, 0]], np.uint8)
    assert dice(full, full) == 1.0
    assert dice(full, np.array([[2, 3], [1, 0]], np.uint8)) == 0.0


def test_dice_all_background_pair_scores_one():
    z = np.zeros((4, 4), np.uint8)
    assert dice(z, z) == 1.0


@settings(max_examples=60, deadline=None)
@given(masks, st.data())
def test_dice_and_mi_symmetric(a, data):
    b = data.draw(arrays(np.uint8, a.shape, elements=st.integers(0, 3)))
    assert dice(a, b) == dice(b, a)
    assert mutual_information(a, b) == pytest.approx(mutual_information(b, a), abs=1e-12)
    assert mutual_information(a, b) >= 0
    if a.any():
        assert dice(a, a) == 1.0


@settings(max_examples=60, deadline=None)
@given(masks)
def test_self_mi_equals_label_entropy(m):
    p = np.bincount(m.ravel(), minlength=4) / m.size
    h = -sum(x * math.log(x) for x in p if x > 0)
    assert mutual_information(m, m) == pytest.approx(h, abs=1e-12)
    assert label_entropy(m) == pytest.approx(h, abs=1e-12)


def test_mi_examples():
    m = np.zeros((4, 4), np.uint8)
    m[:, :2] = 2
    assert mutual_information(m, m) == pytest.approx(math.log(2), abs=1e-12)
    assert mutual_information(m, np.ones_like(m)) == 0.0
    perm = np.array([3, 0, 1, 2], np.uint8)[m]
    assert mutual_information(m, perm) == pytest.approx(mutual_information(m, m), abs=1e-12)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        dice(np.zeros((3, 3), np.uint8), np.zeros((3, 4), np.uint8))
    with pytest.raises(ValueError):
        mutual_information(np.zeros((3, 3), np.uint8), np.zeros((4, 3), np.uint8))


def test_label_range_validated():
    with pytest.raises(LabelRangeError):
        as_mask(np.array([[0, 4]], np.uint8))


# -- center of mass, cropping, clamping --------------------------------------------

def test_center_of_mass_examples():
    m = np.zeros((30, 30), np.uint8)
    m[20, 10] = 2
    assert center_of_mass(m) == (10, 20)
    m = np.zeros((11, 11), np.uint8)
    m[4:7, 4:7] = 1
    assert center_of_mass(m) == (5, 5)
    m = np.zeros((3, 3), np.uint8)
    m[0, 0] = 1
    m[0, 2] = 3
    assert center_of_mass(m) == (1, 0)


def test_center_of_mass_empty_raises():
    with pytest.raises(EmptyMaskError):
        center_of_mass(np.zeros((5, 5), np.uint8))


def test_crop_constant_interior():
    img = np.full((100, 100), 0.25, np.float32)
    patch = crop_patch(img, (50.3, 49.6), 24)
    assert patch.shape == (24, 24) and np.all(patch == 0.25)


def test_crop_corner_zero_padding():
    img = np.random.default_rng(0).random((256, 256)).astype(np.float32) + 0.1
    patch = crop_patch(img, (0, 0), 64)
    assert np.all(patch[:32, :] == 0) and np.all(patch[:, :32] == 0)
    assert np.array_equal(patch[32:, 32:], img[:32, :32])
    assert np.array_equal(patch, crop_patch(img, (0, 0), 64))


@settings(max_examples=60, deadline=None)
@given(st.floats(-100, 200), st.floats(-100, 200), st.sampled_from([2, 4, 24, 64]))
def test_crop_always_size_by_size(x, y, size):
    img = np.ones((50, 70), np.float32)
    assert crop_patch(img, (x, y), size).shape == (size, size)


def test_crop_rejects_odd_size():
    with pytest.raises(ValueError):
        crop_patch(np.zeros((8, 8), np.float32), (4, 4), 5)


def test_clamp_point():
    assert clamp_point((-3.0, 300.0), (256, 200)) == (0.0, 255.0)
    assert clamp_point((10.5, 20.25), (256, 256)) == (10.5, 20.25)


def test_union_dice_ignores_labels():
    a = np.zeros((8, 8), np.uint8)
    a[2:6, 2:6] = 1
    b = np.where(a > 0, 3, 0).astype(np.uint8)
    assert dice(a, b, mode="union") == 1.0
    assert dice(a, b) == pytest.approx(1.0 / 3)   # classes 1 and 3 score 0, class 2 is absent from both
    assert dice(np.zeros_like(a), np.zeros_like(a), mode="union") == 1.0
