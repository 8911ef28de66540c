import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modules.numerics import ShapeError, gelu, layer_norm, matmul, relative_error, row_softmax, row_sum


def test_matmul_identity_and_small_product():
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    np.testing.assert_array_equal(matmul(np.eye(2, dtype=np.float32), a), a)
    np.testing.assert_array_equal(matmul([[1.0, 2.0]], [[3.0], [4.0]]), [[11.0]])


def test_matmul_matches_scalar_loop():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((7, 5)).astype(np.float32)
    b = rng.standard_normal((5, 3)).astype(np.float32)

    expected = np.zeros((7, 3))
    for i in range(7):
        for j in range(3):
            expected[i, j] = sum(float(a[i, k]) * float(b[k, j]) for k in range(5))

    np.testing.assert_allclose(matmul(a, b), expected, rtol=1e-5, atol=1e-5)


def test_matmul_is_bit_deterministic():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((9, 11)).astype(np.float32)
    b = rng.standard_normal((11, 6)).astype(np.float32)
    assert matmul(a, b).tobytes() == matmul(a.copy(), b.copy()).tobytes()


def test_matmul_batched_matches_per_head():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 4, 5)).astype(np.float32)
    b = rng.standard_normal((3, 5, 2)).astype(np.float32)
    out = matmul(a, b)
    for h in range(3):
        np.testing.assert_array_equal(out[h], matmul(a[h], b[h]))


def test_matmul_rejects_mismatched_inner_dims():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_row_sum_is_left_to_right():
    a = np.array([[1e8, 1.0, -1e8]], dtype=np.float32)
    # float32: (1e8 + 1) rounds back to 1e8
    assert row_sum(a)[0, 0] == np.float32(0.0)


def test_row_softmax_examples():
    np.testing.assert_allclose(row_softmax([[0.0, 0.0]]), [[0.5, 0.5]])
    np.testing.assert_allclose(row_softmax([[1000.0, 0.0]]), [[1.0, 0.0]], atol=1e-7)
    np.testing.assert_allclose(row_softmax([[0.0, -np.inf]]), [[1.0, 0.0]])
    np.testing.assert_array_equal(row_softmax([[-np.inf, -np.inf]]), [[0.0, 0.0]])


def test_row_softmax_rejects_nan():
    with pytest.raises(ShapeError):
        row_softmax([[np.nan, 0.0]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (3, 7), elements=st.floats(-30, 30, width=32)))
def test_row_softmax_rows_sum_to_one(a):
    out = row_softmax(a)
    assert (out >= 0).all()
    np.testing.assert_allclose(out.astype(np.float64).sum(axis=-1), 1.0, atol=1e-6)


def test_layer_norm_constant_row_is_zero():
    out = layer_norm(np.full((1, 4), 3.0), np.ones(4), np.zeros(4))
    np.testing.assert_array_equal(out, np.zeros((1, 4), dtype=np.float32))


def test_layer_norm_two_values():
    out = layer_norm([[-1.0, 1.0]], np.ones(2), np.zeros(2))
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (2, 16), elements=st.floats(-100, 100, width=32)))
def test_layer_norm_rows_are_centered(a):
    out = layer_norm(a, np.ones(16), np.zeros(16)).astype(np.float64)
    assert np.abs(out.mean(axis=-1)).max() <= 1e-6


def test_layer_norm_unit_variance():
    a = np.random.default_rng(6).standard_normal((1, 64)).astype(np.float32)
    out = layer_norm(a, np.ones(64), np.zeros(64)).astype(np.float64)
    assert abs(out.var() - 1.0) <= 1e-4


def test_layer_norm_rejects_wrong_gain_length():
    with pytest.raises(ShapeError):
        layer_norm(np.zeros((2, 4)), np.ones(3), np.zeros(4))


def test_gelu_fixed_points():
    np.testing.assert_allclose(gelu([0.0, 10.0, -10.0]), [0.0, 10.0, 0.0], atol=1e-6)


def test_relative_error_of_equal_arrays_is_zero():
    a = np.arange(4.0)
    assert relative_error(a, a) == 0.0
