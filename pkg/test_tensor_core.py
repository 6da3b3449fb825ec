"""Tensor primitives, int8 helpers and the seeded RNG."""
from collections import Counter

import numpy as np
import pytest

from core.errors import DimensionError, InputError, ParameterError
from services.tensor_core import (
    Rng, as_tensor, flat_index, int8_matmul, matmul, quantize_activation, rng_permutation,
    round_half_away, symmetric_int8,
)


def test_matmul_identity_and_small_product():
    np.testing.assert_array_equal(matmul(np.eye(2, dtype=np.float32), np.array([[3], [4]], np.float32)),
                                  [[3], [4]])
    np.testing.assert_array_equal(matmul(np.array([[1, 2]], np.float32), np.array([[3], [4]], np.float32)),
                                  [[11]])


def test_matmul_matches_triple_loop(np_rng):
    a = np_rng.standard_normal((5, 4)).astype(np.float32)
    b = np_rng.standard_normal((4, 3)).astype(np.float32)
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                expected[i, j] += float(a[i, k]) * float(b[k, j])
    np.testing.assert_allclose(matmul(a, b), expected, atol=1e-6)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.zeros((2, 3), np.float32), np.zeros((2, 3), np.float32))


def test_as_tensor_rejects_non_finite():
    with pytest.raises(InputError):
        as_tensor([1.0, np.nan])
    assert as_tensor([[1, 2]]).dtype == np.float32


def test_flat_index_row_major():
    assert flat_index((2, 3), (1, 2)) == 5
    assert flat_index((4, 2, 3), (2, 1, 0)) == 2 * 6 + 1 * 3
    with pytest.raises(DimensionError):
        flat_index((2, 3), (2, 0))


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(round_half_away(np.array([0.5, 1.5, -0.5, -2.5, 0.49])),
                                  [1.0, 2.0, -1.0, -3.0, 0.0])


def test_symmetric_int8_scheme():
    q, scale = symmetric_int8(np.array([0.5, -1.0]), work_dtype=np.float64)
    assert scale == pytest.approx(1 / 127)
    np.testing.assert_array_equal(q, [64, -127])

    q, scale = symmetric_int8(np.zeros(4))
    assert scale == 1.0
    assert not q.any()


def test_activation_codes_match_weight_scheme(np_rng):
    x = (np_rng.standard_normal((6, 9)) * 3).astype(np.float32)
    x[2, 4] = 0.0
    codes, scale = quantize_activation(x)
    expected, expected_scale = symmetric_int8(x)
    assert scale == expected_scale
    np.testing.assert_array_equal(codes, expected.astype(np.float32))
    assert codes.dtype == np.float32

    codes, scale = quantize_activation(np.zeros((2, 2), np.float32))
    assert scale == 1.0 and not codes.any()


def test_int8_matmul_exact_on_representable_operands(np_rng):
    x = np_rng.integers(-127, 128, size=(3, 8)).astype(np.float32)
    x[0, 0] = 127.0
    w_codes = np_rng.integers(-127, 128, size=(8, 5)).astype(np.float32)
    out = int8_matmul(x, w_codes, 0.5)
    np.testing.assert_array_equal(out, (x @ w_codes) * 0.5)


def test_int8_matmul_large_inner_dimension_stays_exact():
    k = 2048
    x = np.full((1, k), 127.0, np.float32)
    w = np.full((k, 1), 127.0, np.float32)
    assert int8_matmul(x, w, 1.0)[0, 0] == np.float32(k * 127 * 127)


def test_rng_same_seed_same_sequence():
    a, b = Rng(42), Rng(42)
    np.testing.assert_array_equal(a.normal(size=16), b.normal(size=16))
    assert not np.array_equal(Rng(42).normal(size=16), Rng(43).normal(size=16))


def test_rng_children_are_independent_and_reproducible():
    root = Rng(7)
    np.testing.assert_array_equal(root.child(3).random(8), Rng(7).child(3).random(8))
    assert not np.array_equal(root.child(3).random(8), root.child(4).random(8))


def test_rng_rejects_bad_seed():
    with pytest.raises(ParameterError):
        Rng(-1)


def test_permutation_small_cases():
    assert rng_permutation(Rng(0), 0) == []
    assert rng_permutation(Rng(0), 1) == [0]
    first = rng_permutation(Rng(5), 4)
    assert sorted(first) == [0, 1, 2, 3]
    assert first == rng_permutation(Rng(5), 4)


def test_permutation_is_roughly_uniform():
    rng = Rng(11)
    counts = Counter(tuple(rng_permutation(rng.child(i), 3)) for i in range(6000))
    assert len(counts) == 6
    for c in counts.values():
        assert abs(c - 1000) < 150
