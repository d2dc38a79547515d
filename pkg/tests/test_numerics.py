import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttalab.numerics import (derive_rng, l2_normalize, log_sum_exp, matmul,
                             rng_standard_normal, softmax)

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False)


def test_softmax_symmetry():
    assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-12)


def test_softmax_two_logits_high_precision():
    # e/(e+1) evaluated at 40-digit precision
    out = softmax([1.0, 0.0])
    assert abs(out[0] - 0.7310585786300049) < 1e-12
    assert abs(out[1] - 0.2689414213699951) < 1e-12


def test_softmax_no_overflow():
    out = softmax([1000.0, 0.0])
    assert np.isfinite(out).all()
    assert out[0] > 1 - 1e-12 and out[1] < 1e-12


def test_softmax_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite logits"):
        softmax([np.nan, 0.0])
    with pytest.raises(ValueError, match="non-finite logits"):
        softmax([np.inf, 0.0])


@given(st.lists(finite_floats, min_size=1, max_size=20), finite_floats)
@settings(max_examples=60, deadline=None)
def test_softmax_shift_invariance(logits, shift):
    a = softmax(logits)
    b = softmax(np.asarray(logits) + shift)
    assert np.abs(a - b).max() < 1e-12


@given(st.lists(finite_floats, min_size=1, max_size=20))
@settings(max_examples=60, deadline=None)
def test_lse_reconstructs_softmax(logits):
    x = np.asarray(logits)
    lse = log_sum_exp(x)
    q = softmax(x)
    recon = np.exp(lse - x)
    assert np.abs(recon - 1.0 / q).max() / np.abs(1.0 / q).max() < 1e-10


def test_lse_values():
    assert log_sum_exp([0.0]) == 0.0
    assert abs(log_sum_exp([0.0, 0.0]) - 0.6931471805599453) < 1e-12
    assert abs(log_sum_exp([1000.0, 1000.0]) - (1000.0 + 0.6931471805599453)) < 1e-9


def test_l2_normalize_345():
    assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)


def test_l2_normalize_idempotent():
    v = l2_normalize([1.0, 2.0, -0.5])
    again = l2_normalize(v)
    assert np.abs(v - again).max() < 1e-15
    assert abs(np.linalg.norm(again) - 1.0) < 1e-12


def test_l2_normalize_zero_vector():
    with pytest.raises(ValueError, match="zero-norm embedding"):
        l2_normalize([0.0, 0.0])


def test_matmul_identity():
    m = derive_rng(1, "t").standard_normal((4, 3))
    assert np.array_equal(matmul(np.eye(4), m), m)


def test_matmul_1x1():
    assert matmul([[2.0]], [[3.0]])[0, 0] == 6.0


def test_matmul_matches_triple_loop_exactly():
    rng = derive_rng(2, "mm")
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3))
    ref = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += a[i, k] * b[k, j]
            ref[i, j] = s
    assert np.array_equal(matmul(a, b), ref)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_rng_determinism():
    a = rng_standard_normal(derive_rng(42, "x"), 64)
    b = rng_standard_normal(derive_rng(42, "x"), 64)
    assert np.array_equal(a, b)


def test_rng_streams_differ_by_tag():
    a = rng_standard_normal(derive_rng(42, "x"), 8)
    b = rng_standard_normal(derive_rng(42, "y"), 8)
    assert not np.array_equal(a, b)


def test_rng_moments():
    draws = rng_standard_normal(derive_rng(7, "moments"), 10**6)
    assert abs(draws.mean()) < 0.01
    assert 0.99 < draws.var() < 1.01
