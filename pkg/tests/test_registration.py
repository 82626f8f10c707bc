import math

import numpy as np
import pytest

from rlnloc.imaging import (
    AffineTransform2D,
    EmptyMaskError,
    apply_to_point,
    center_of_mass,
    mutual_information,
    resample_mask,
)
from rlnloc.registration import (
    RegistrationConfig,
    RegistrationConfigError,
    RegParams,
    initialize,
    nelder_mead,
    register,
)


def about(center, deg=0.0, shift=(0.0, 0.0), scale=(1.0, 1.0)):
    a = math.radians(deg)
    lin = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]) @ np.diag(scale)
    c = np.asarray(center, dtype=float)
    return AffineTransform2D(lin, c - lin @ c + np.asarray(shift))


# -- initialization --------------------------------------------------------------

def test_initialize_self_is_identity(phantom):
    p = initialize(phantom[0], phantom[0])
    assert (p.tx, p.ty) == (0.0, 0.0)
    assert p.to_affine() == AffineTransform2D.identity()


def test_initialize_com_difference():
    a = np.zeros((30, 30), np.uint8)
    a[10, 10] = 1
    b = np.zeros((30, 30), np.uint8)
    b[12, 15] = 2
    p = initialize(a, b)
    assert (p.tx, p.ty) == (5.0, 2.0)
    assert (p.rotation, p.scale_x, p.scale_y, p.shear) == (0.0, 1.0, 1.0, 0.0)


def test_initialize_rotation_about_com_gives_zero_shift():
    m = np.zeros((41, 41), np.uint8)
    m[14:27, 10:31] = 2
    rotated = resample_mask(m, about((20, 20), 90))
    p = initialize(m, rotated)
    assert abs(p.tx) < 1e-12 and abs(p.ty) < 1e-12


def test_initialize_empty_raises():
    with pytest.raises(EmptyMaskError):
        initialize(np.zeros((4, 4), np.uint8), np.ones((4, 4), np.uint8))


# -- parameters --------------------------------------------------------------------

def test_params_clip_and_invertible():
    p = RegParams.from_vector([500, -500, 4.0, 9.0, 0.1, 2.0])
    assert (p.tx, p.ty) == (128.0, -128.0)
    assert p.rotation == pytest.approx(math.pi / 2)
    assert (p.scale_x, p.scale_y, p.shear) == (2.0, 0.5, 0.5)
    assert p.to_affine().is_invertible()


def test_params_pivot_keeps_pivot_fixed_without_translation():
    p = RegParams(rotation=0.3, scale_x=1.2, shear=0.1, pivot=(40.0, 25.0))
    assert np.allclose(apply_to_point(p.to_affine(), (40, 25)), (40, 25), atol=1e-12)


def test_config_validation():
    with pytest.raises(RegistrationConfigError):
        RegistrationConfig(max_evaluations=0).validate()
    with pytest.raises(RegistrationConfigError):
        RegistrationConfig(restarts=0).validate()


# -- optimizer ------------------------------------------------------------------------

def test_nelder_mead_quadratic():
    f = lambda x: (x[0] - 3) ** 2 + 10 * (x[1] + 1) ** 2
    x, fx, n = nelder_mead(f, [0.0, 0.0], [1.0, 1.0], 2000, 1e-14, 1e-9)
    assert np.allclose(x, (3, -1), atol=1e-4) and fx < 1e-8 and n <= 2000


def test_nelder_mead_respects_budget():
    calls = []
    f = lambda x: calls.append(1) or float(np.sum(x ** 2))
    _, _, n = nelder_mead(f, np.ones(6), np.ones(6), 25, 0, 0)
    assert n == len(calls) <= 25


# -- registration ---------------------------------------------------------------------

def test_register_self(phantom):
    m = phantom[0]
    res = register(m, m)
    assert res.mi == pytest.approx(mutual_information(m, m), abs=1e-9)
    assert np.max(np.abs(res.transform.linear - np.eye(2))) <= 1e-5
    assert np.max(np.abs(res.transform.translation)) <= 1e-5


def test_register_recovers_translation(phantom):
    m = phantom[0]
    fixed = resample_mask(m, AffineTransform2D(np.eye(2), (6, -4)))
    res = register(m, fixed)
    assert res.params.rotation == pytest.approx(0, abs=math.radians(1))
    c = center_of_mass(m)
    moved = apply_to_point(res.transform, c)
    assert abs(moved[0] - c[0] - 6) <= 0.5 and abs(moved[1] - c[1] + 4) <= 0.5


def test_register_recovers_rotation(phantom):
    m = phantom[0]
    fixed = resample_mask(m, about((127.5, 127.5), 8))
    res = register(m, fixed)
    assert math.degrees(res.params.rotation) == pytest.approx(8, abs=1)


def test_register_deterministic(phantom):
    m = phantom[0]
    fixed = resample_mask(m, about((127.5, 127.5), -5, (3, 2), (1.05, 0.97)))
    a = register(m, fixed, RegistrationConfig(seed=11))
    b = register(m, fixed, RegistrationConfig(seed=11))
    assert a.params == b.params and a.mi == b.mi and a.evaluations == b.evaluations


def test_register_never_worse_than_start():
    from rlnloc.synth import CohortConfig, generate_phantom, sample_params

    rng = np.random.default_rng(5)
    for i in range(100):
        side = "left" if i % 2 else "right"
        a = generate_phantom(sample_params(rng, side, CohortConfig()), 2 * i)[0]
        b = generate_phantom(sample_params(rng, side, CohortConfig()), 2 * i + 1)[0]
        cfg = RegistrationConfig(max_evaluations=60, restarts=1)
        res = register(a, b, cfg)
        assert res.mi >= res.start_mi
        assert res.mi == pytest.approx(mutual_information(resample_mask(a, res.transform), b), abs=1e-12)


def test_register_without_coarse_search(phantom):
    m = phantom[0]
    fixed = resample_mask(m, AffineTransform2D(np.eye(2), (2, 3)))
    res = register(m, fixed, RegistrationConfig(coarse_search=False, max_evaluations=300))
    assert np.allclose(res.transform.translation, (2, 3), atol=0.5)


def test_register_errors():
    z = np.zeros((8, 8), np.uint8)
    o = np.ones((8, 8), np.uint8)
    with pytest.raises(EmptyMaskError):
        register(z, o)
    with pytest.raises(ValueError):
        register(o, np.ones((8, 9), np.uint8))
