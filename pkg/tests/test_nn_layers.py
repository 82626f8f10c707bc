"""Analytic layer gradients against central finite differences (float64)."""
import numpy as np
import pytest

from rlnloc.nn import layers as L
from rlnloc.nn.gradcheck import numeric_grad, rel_error

TOL = 1e-4
H = 1e-4


def check(forward, backward, inputs, rng, wrt):
    """Compare grads of ``sum(R * forward(*inputs))`` w.r.t. each index in ``wrt``."""
    out, cache = forward(*inputs)
    r = rng.standard_normal(out.shape)
    grads = backward(r, cache)
    worst = 0.0
    for i in wrt:
        x = inputs[i]
        num = numeric_grad(lambda: float(np.sum(forward(*inputs)[0] * r)), x, H)
        worst = max(worst, rel_error(grads[i], num.reshape(x.shape)))
    return worst


CONV_SHAPES = [(1, 1, 4, 4, 1), (2, 3, 8, 8, 2), (1, 2, 5, 7, 3), (3, 1, 6, 3, 2), (2, 4, 4, 6, 1)]


@pytest.mark.parametrize("n,c,h,w,o", CONV_SHAPES)
def test_conv2d_gradients(n, c, h, w, o, rng):
    x = rng.standard_normal((n, c, h, w))
    k = rng.standard_normal((o, c, 3, 3))
    b = rng.standard_normal(o)
    err = check(L.conv2d_forward, L.conv2d_backward, [x, k, b], rng, [0, 1, 2])
    assert err < TOL


@pytest.mark.parametrize("shape", [(1, 1, 2, 2), (2, 3, 4, 4), (1, 2, 5, 3), (3, 2, 6, 6), (2, 1, 7, 2)])
def test_instance_norm_gradients(shape, rng):
    x = rng.standard_normal(shape) * 3 + 1
    err = check(lambda a: L.instance_norm_forward(a), lambda d, c: (L.instance_norm_backward(d, c),), [x], rng, [0])
    assert err < TOL


@pytest.mark.parametrize("shape", [(1, 1, 2, 2), (2, 3, 4, 4), (1, 2, 6, 8), (3, 1, 8, 8), (2, 2, 4, 10)])
def test_relu_and_maxpool_gradients(shape, rng):
    # keep values away from the kinks (0 for relu, ties for max)
    x = rng.permutation(np.arange(np.prod(shape)) - np.prod(shape) / 2.0 + 0.5).reshape(shape) * 0.1
    assert check(L.relu_forward, lambda d, m: (L.relu_backward(d, m),), [x], rng, [0]) < TOL
    assert check(L.max_pool2_forward, lambda d, c: (L.max_pool2_backward(d, c),), [x], rng, [0]) < TOL


@pytest.mark.parametrize("shape,out", [((1, 1, 4, 4), 4), ((2, 2, 6, 6), 4), ((1, 3, 8, 8), 4),
                                       ((2, 1, 7, 5), 4), ((1, 2, 9, 9), 2), ((1, 1, 5, 5), 1)])
def test_adaptive_pool_gradients(shape, out, rng):
    x = rng.permutation(np.arange(np.prod(shape), dtype=np.float64)).reshape(shape) * 0.1
    err = check(lambda a: L.adaptive_max_pool_forward(a, out),
                lambda d, c: (L.adaptive_max_pool_backward(d, c),), [x], rng, [0])
    assert err < TOL


@pytest.mark.parametrize("shape,size", [((1, 1, 1, 1), 4), ((2, 3, 2, 2), 4), ((1, 2, 4, 4), 4),
                                        ((2, 1, 2, 2), 8), ((1, 1, 3, 3), 6)])
def test_upsample_gradients(shape, size, rng):
    x = rng.standard_normal(shape)
    err = check(lambda a: L.upsample_nearest_forward(a, size),
                lambda d, f: (L.upsample_nearest_backward(d, f),), [x], rng, [0])
    assert err < TOL


@pytest.mark.parametrize("n,i,o", [(1, 1, 1), (4, 3, 2), (2, 10, 5), (8, 7, 3), (3, 16, 9)])
def test_linear_gradients(n, i, o, rng):
    x = rng.standard_normal((n, i))
    w = rng.standard_normal((o, i))
    b = rng.standard_normal(o)
    err = check(L.linear_forward, lambda d, c: L.linear_backward(d, c, w), [x, w, b], rng, [0, 1, 2])
    assert err < TOL


@pytest.mark.parametrize("n,c,h,w,o", CONV_SHAPES)
def test_conv_block_gradients(n, c, h, w, o, rng):
    if h * w < 2:
        pytest.skip("instance norm needs two pixels")
    x = rng.standard_normal((n, c, h, w))
    w1 = rng.standard_normal((o, c, 3, 3))
    w2 = rng.standard_normal((o, o, 3, 3))
    err = check(L.conv_block_forward, L.conv_block_backward, [x, w1, w2], rng, [0, 1, 2])
    assert err < TOL


# -- forward examples ------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    out, _ = L.conv2d_forward(x, k, np.zeros(1))
    assert np.array_equal(out, x)


def test_conv_zero_input_gives_bias():
    out, _ = L.conv2d_forward(np.zeros((2, 3, 5, 5)), np.ones((4, 3, 3, 3)), np.arange(4.0))
    assert np.array_equal(out, np.broadcast_to(np.arange(4.0)[None, :, None, None], (2, 4, 5, 5)))


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    k = rng.standard_normal((4, 3, 3, 3))
    out, _ = L.conv2d_forward(x, k)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 6))
    for r in range(5):
        for c in range(6):
            ref[:, :, r, c] = np.einsum("ncij,ocij->no", xp[:, :, r:r + 3, c:c + 3], k)
    assert np.allclose(out, ref, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(L.ShapeError):
        L.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(L.ShapeError):
        L.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 5, 5)))


def test_instance_norm_statistics(rng):
    out, _ = L.instance_norm_forward(rng.standard_normal((2, 3, 8, 8)) * 5 + 2)
    assert np.all(np.abs(out.mean(axis=(2, 3))) <= 1e-6)
    assert np.all(np.abs(out.var(axis=(2, 3)) - 1) <= 1e-4)
    const, _ = L.instance_norm_forward(np.full((1, 1, 4, 4), 3.0))
    assert np.array_equal(const, np.zeros((1, 1, 4, 4)))
    with pytest.raises(L.ShapeError):
        L.instance_norm_forward(np.zeros((1, 1, 1, 1)))


def test_relu_example():
    out, _ = L.relu_forward(np.array([-1.0, 0.0, 2.0]))
    assert out.tolist() == [0, 0, 2]


def test_adaptive_pool_on_8x8_equals_maxpool2(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    assert np.array_equal(L.adaptive_max_pool_forward(x, 4)[0], L.max_pool2_forward(x)[0])
    with pytest.raises(L.ShapeError):
        L.adaptive_max_pool_forward(np.zeros((1, 1, 3, 3)), 4)


def test_dtype_preserved(rng):
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    k = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    out, _ = L.conv_block_forward(x, k, rng.standard_normal((3, 3, 3, 3)).astype(np.float32))
    assert out.dtype == np.float32
