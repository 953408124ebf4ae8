import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sicnn.errors import ShapeMismatchError
from sicnn.scaling import (
    OperatorKind,
    apply_operator,
    build_flip_matrix,
    build_resample_matrix,
    devectorize,
    resample_image,
    vectorize,
)

from oracles import bicubic_resize


def test_vectorize_roundtrip():
    rng = np.random.default_rng(0)
    for side in (1, 2, 5, 9):
        v = rng.standard_normal(side * side)
        assert np.array_equal(vectorize(devectorize(v, side)), v)


def test_vectorize_is_row_major():
    patch = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(vectorize(patch), np.arange(9.0))


def test_equal_sizes_give_exact_identity():
    for s in (1, 3, 5, 8):
        op = build_resample_matrix(s, s)
        assert op.kind is OperatorKind.IDENTITY
        assert np.array_equal(op.matrix, np.eye(s * s))


@given(st.integers(1, 12), st.integers(1, 12))
@settings(max_examples=40, deadline=None)
def test_resample_rows_sum_to_one(in_size, out_size):
    op = build_resample_matrix(in_size, out_size)
    assert op.matrix.shape == (out_size**2, in_size**2)
    assert np.abs(op.matrix.sum(axis=1) - 1.0).max() < 1e-9


def test_rejects_size_zero():
    with pytest.raises(ValueError):
        build_resample_matrix(0, 4)
    with pytest.raises(ValueError):
        build_resample_matrix(4, 0)
    with pytest.raises(ValueError):
        build_flip_matrix(0)


def test_upsample_ramp_matches_pointwise_oracle():
    # 5x5 ramp I(x, y) = x (value equals the column index)
    ramp = np.tile(np.arange(5.0), (5, 1))
    op = build_resample_matrix(5, 9)
    got = devectorize(op.matrix @ vectorize(ramp), 9)
    want = bicubic_resize(ramp, 9, 9)
    assert np.abs(got - want).max() < 2e-2


def test_flip_matrix_small_cases():
    assert np.array_equal(build_flip_matrix(1).matrix, np.eye(1))
    patch = np.arange(1.0, 10.0).reshape(3, 3)
    flipped = devectorize(build_flip_matrix(3).matrix @ vectorize(patch), 3)
    assert np.array_equal(flipped, patch[:, ::-1])


@given(st.integers(1, 10))
@settings(max_examples=20, deadline=None)
def test_flip_is_involution(size):
    m = build_flip_matrix(size).matrix
    assert np.array_equal(m @ m, np.eye(size * size))
    # permutation matrix: exactly one 1 per row/column
    assert np.array_equal(m.sum(axis=0), np.ones(size * size))
    assert np.array_equal(m.sum(axis=1), np.ones(size * size))
    assert set(np.unique(m)) <= {0.0, 1.0}


def test_apply_operator_identity_and_flip():
    rng = np.random.default_rng(1)
    patch = rng.standard_normal((3, 4, 4))
    ident = build_resample_matrix(4, 4)
    assert np.array_equal(apply_operator(ident, patch), patch)
    flip = build_flip_matrix(4)
    assert np.allclose(apply_operator(flip, apply_operator(flip, patch)), patch)
    assert np.array_equal(apply_operator(flip, patch), patch[:, :, ::-1])


def test_apply_operator_rejects_wrong_size():
    op = build_resample_matrix(4, 8)
    with pytest.raises(ShapeMismatchError):
        apply_operator(op, np.zeros((1, 5, 5)))


def test_constant_image_preserved():
    op = build_resample_matrix(32, 64)
    patch = np.full((1, 32, 32), 0.37)
    out = apply_operator(op, patch)
    assert out.shape == (1, 64, 64)
    assert np.abs(out - 0.37).max() < 1e-9
    img = np.full((3, 20, 20), -1.5)
    for target in ((20, 20), (7, 13), (40, 40)):
        res = resample_image(img, *target)
        assert np.abs(res + 1.5).max() < 1e-9


def test_resample_image_identity_sizes():
    rng = np.random.default_rng(2)
    img = rng.standard_normal((3, 6, 11))
    assert np.allclose(resample_image(img, 6, 11), img, atol=1e-12)


def test_resample_image_matches_matrix_path():
    rng = np.random.default_rng(3)
    ramp = np.tile(np.arange(5.0), (5, 1))[None]
    via_matrix = apply_operator(build_resample_matrix(5, 9), ramp)
    via_direct = resample_image(ramp, 9, 9)
    assert np.abs(via_matrix - via_direct).max() < 1e-9

    for s_in, s_out in [(2, 5), (7, 3), (16, 9), (9, 16), (11, 11)]:
        patch = rng.standard_normal((2, s_in, s_in))
        a = apply_operator(build_resample_matrix(s_in, s_out), patch)
        b = resample_image(patch, s_out, s_out)
        assert np.abs(a - b).max() < 1e-9


def test_matrix_vs_direct_agreement_all_sides_up_to_16():
    rng = np.random.default_rng(4)
    for s_in in range(1, 17):
        for s_out in range(1, 17):
            patch = rng.standard_normal((1, s_in, s_in))
            a = apply_operator(build_resample_matrix(s_in, s_out), patch)
            b = resample_image(patch, s_out, s_out)
            assert np.abs(a - b).max() < 1e-9, (s_in, s_out)


def test_operator_linearity():
    rng = np.random.default_rng(5)
    op = build_resample_matrix(6, 10)
    x = rng.standard_normal((2, 6, 6))
    y = rng.standard_normal((2, 6, 6))
    a, b = 1.7, -0.3
    lhs = apply_operator(op, a * x + b * y)
    rhs = a * apply_operator(op, x) + b * apply_operator(op, y)
    assert np.abs(lhs - rhs).max() < 1e-9


def test_flip_commutes_with_resample():
    rng = np.random.default_rng(6)
    for s_in, s_out in [(5, 9), (5, 3), (4, 7), (8, 8)]:
        img = rng.standard_normal((1, s_in, s_in))
        up = build_resample_matrix(s_in, s_out)
        flipped_then_scaled = apply_operator(up, img[:, :, ::-1])
        scaled_then_flipped = apply_operator(up, img)[:, :, ::-1]
        assert np.abs(flipped_then_scaled - scaled_then_flipped).max() < 1e-9


def test_operator_cache_returns_same_object():
    a = build_resample_matrix(5, 9)
    b = build_resample_matrix(5, 9)
    assert a is b
    assert build_flip_matrix(5) is build_flip_matrix(5)


def test_resample_image_rejects_bad_shapes():
    with pytest.raises(ShapeMismatchError):
        resample_image(np.zeros((4, 4)), 8, 8)
    with pytest.raises(ValueError):
        resample_image(np.zeros((1, 4, 4)), 0, 8)
