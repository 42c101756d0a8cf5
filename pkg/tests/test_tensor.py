import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radnet.errors import ArgumentError, ShapeError
from radnet.tensor import bilinear_resize, col2im, im2col, matmul, pad_same, reduce

from conftest import naive_conv


def test_matmul_examples():
    X = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(matmul(np.eye(3), X), X)
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0, 1], [1, 0]]), [[2, 1], [4, 3]])
    np.testing.assert_array_equal(matmul(np.zeros((2, 3)), np.ones((3, 2))), np.zeros((2, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_matmul_associative(m, k, n, p, seed):
    r = np.random.default_rng(seed)
    a, b, c = r.standard_normal((m, k)), r.standard_normal((k, n)), r.standard_normal((n, p))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert left.shape == (m, p)
    np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-9 * np.abs(left).max())


def test_pad_same_single_pixel_and_ones():
    out = pad_same(np.array([[[5.0]]]), (3, 3))
    expected = np.zeros((1, 3, 3))
    expected[0, 1, 1] = 5
    np.testing.assert_array_equal(out, expected)
    out = pad_same(np.ones((1, 3, 3)), (3, 3))
    assert out.shape == (1, 5, 5)
    assert out.sum() == 9 and np.all(out[0, 1:4, 1:4] == 1)


def test_pad_same_round_trip_and_even_kernel(rng):
    x = rng.standard_normal((2, 4, 5))
    np.testing.assert_array_equal(pad_same(x, (3, 3))[:, 1:-1, 1:-1], x)
    np.testing.assert_array_equal(pad_same(x, (5, 5))[:, 2:-2, 2:-2], x)
    with pytest.raises(ArgumentError):
        pad_same(x, (2, 2))


def test_im2col_single_window():
    x = np.arange(9.0).reshape(1, 3, 3)
    cols = im2col(x, (3, 3), 1)
    assert cols.shape == (9, 1)
    np.testing.assert_array_equal(cols[:, 0], x.reshape(-1))


def test_im2col_4x4_first_column_is_top_left_window():
    x = np.arange(16.0).reshape(1, 4, 4)
    cols = im2col(x, (3, 3), 1)
    assert cols.shape == (9, 4)
    # direct window extraction, output positions in row-major order
    for j, (r, c) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        np.testing.assert_array_equal(cols[:, j], x[0, r:r + 3, c:c + 3].reshape(-1))


def test_im2col_rejects_zero_stride():
    with pytest.raises(ArgumentError):
        im2col(np.ones((1, 3, 3)), (3, 3), 0)


def _lowered_conv(x, W, b):
    cols = im2col(pad_same(x, W.shape[2:]), W.shape[2:])
    out = matmul(W.reshape(W.shape[0], -1), cols) + b[:, None]
    return out.reshape(W.shape[0], *x.shape[1:])


def test_conv_equivalence_random_2x5x5(rng):
    x = rng.standard_normal((2, 5, 5))
    W = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    np.testing.assert_allclose(_lowered_conv(x, W, b), naive_conv(x, W, b), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 8), st.integers(1, 8), st.integers(1, 3),
       st.sampled_from([1, 3]), st.integers(0, 2**31))
def test_conv_equivalence_property(c, h, w, f, k, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((c, h, w))
    W = r.standard_normal((f, c, k, k))
    b = r.standard_normal(f)
    np.testing.assert_allclose(_lowered_conv(x, W, b), naive_conv(x, W, b), rtol=0, atol=1e-12)


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    cols = rng.standard_normal(im2col(x, (3, 3)).shape)
    lhs = np.sum(im2col(x, (3, 3)) * cols)
    rhs = np.sum(x * col2im(cols, x.shape, (3, 3)))
    assert abs(lhs - rhs) < 1e-10


def test_bilinear_constant_and_single_pixel():
    out = bilinear_resize(np.full((2, 3, 5), 7.0), (11, 4))
    np.testing.assert_allclose(out, 7.0, rtol=0, atol=1e-12)
    out = bilinear_resize(np.array([[[2.5]]]), (4, 6))
    np.testing.assert_array_equal(out, np.full((1, 4, 6), 2.5))


def test_bilinear_hand_evaluated_2x2_to_4x4():
    # pixel centers: src = (dst + 0.5) * 2/4 - 0.5 -> -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]
    x = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    out = bilinear_resize(x, (4, 4))
    np.testing.assert_allclose(out[0], np.tile([0.0, 0.25, 0.75, 1.0], (4, 1)), atol=1e-15)


def test_bilinear_zero_output_rejected():
    with pytest.raises(ArgumentError):
        bilinear_resize(np.ones((1, 2, 2)), (0, 3))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
def test_bilinear_identity_when_same_size(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((2, h, w))
    np.testing.assert_array_equal(bilinear_resize(x, (h, w)), x)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 12), st.integers(1, 12))
def test_bilinear_output_shape_and_range(h, w, oh, ow):
    x = np.random.default_rng(h * 100 + w).random((3, h, w))
    out = bilinear_resize(x, (oh, ow))
    assert out.shape == (3, oh, ow)
    assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


def test_reduce_examples():
    assert reduce(np.ones((4, 4)), "mean") == 1.0
    np.testing.assert_array_equal(reduce(np.array([[1, 2], [3, 4]]), "sum", 0), [4, 6])
    assert reduce(np.array([3.5]), "max") == 3.5
    with pytest.raises(ArgumentError):
        reduce(np.ones(3), "sum", ())
    with pytest.raises(ArgumentError):
        reduce(np.ones(3), "median")
