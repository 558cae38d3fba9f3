import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajgs import autodiff as ad
from trajgs.basis import (MotionBasis, dct_basis, evaluate, fit_coefficients, reconstruct,
                          stack_trajectories, unstack_trajectories)


def test_dc_column():
    np.testing.assert_allclose(dct_basis(4, 1)[:, 0], [0.5, 0.5, 0.5, 0.5], atol=1e-15)


@pytest.mark.parametrize("n", [4, 8, 30, 100, 512])
def test_orthonormal(n):
    B = dct_basis(n, n)
    assert np.abs(B.T @ B - np.eye(n)).max() < 1e-10


def test_square_gram_tight():
    B = dct_basis(8, 8)
    assert np.abs(B.T @ B - np.eye(8)).max() < 1e-12


def test_first_mode_decreasing():
    col = dct_basis(30, 5)[:, 1]
    assert np.all(np.diff(col) < 0)


def test_overcomplete_rejected():
    with pytest.raises(ValueError, match="over-complete"):
        dct_basis(4, 5)


def test_evaluate_integer_and_fraction():
    B = dct_basis(6, 4)
    np.testing.assert_array_equal(evaluate(B, 3), B[3])
    np.testing.assert_allclose(evaluate(B, 2.5), (B[2] + B[3]) / 2, atol=1e-15)
    assert np.abs(evaluate(B, 2.0) - evaluate(B, 2.0 + 1e-9)).max() < 1e-6
    with pytest.raises(ValueError):
        evaluate(B, 5.5)
    with pytest.raises(ValueError):
        evaluate(B, -0.1)


def test_evaluate_on_tape():
    B = dct_basis(5, 3)
    tape = ad.Tape()
    v = tape.param("B", B)
    g = tape.backward(ad.sum(evaluate(v, 1.25)))["B"]
    expected = np.zeros_like(B)
    expected[1], expected[2] = 0.75, 0.25
    np.testing.assert_allclose(g, expected)


def test_fit_recovers_coefficients(rng):
    B = dct_basis(60, 5)
    A0 = rng.normal(size=(15, 200))
    A = fit_coefficients(reconstruct(B, A0), B)
    assert np.abs(A - A0).max() < 1e-8


def test_constant_trajectory_only_dc(rng):
    c = rng.normal(size=(7, 3))
    traj = np.repeat(c[:, None, :], 10, axis=1)
    A = fit_coefficients(stack_trajectories(traj), dct_basis(10, 6))
    assert np.abs(A[3:]).max() < 1e-12
    assert np.abs(A[:3]).min() > 0


def test_zeros():
    B = dct_basis(10, 4)
    assert not fit_coefficients(np.zeros((30, 5)), B).any()
    assert not reconstruct(B, np.zeros((12, 5))).any()


def test_single_column_replicated():
    B = dct_basis(6, 3)
    A = np.zeros((9, 4))
    A[3 * 1 + 0] = 1.0   # basis vector 1, x axis, all points
    X = unstack_trajectories(reconstruct(B, A))
    for p in range(4):
        np.testing.assert_allclose(X[p, :, 0], B[:, 1])
        assert not X[p, :, 1:].any()


def test_shape_errors():
    B = dct_basis(6, 3)
    with pytest.raises(ValueError):
        fit_coefficients(np.zeros((17, 2)), B)
    with pytest.raises(ValueError):
        reconstruct(B, np.zeros((8, 2)))


def test_non_orthonormal_basis_uses_least_squares(rng):
    B = dct_basis(12, 4) + rng.normal(scale=0.1, size=(12, 4))
    A0 = rng.normal(size=(12, 3))
    assert np.abs(fit_coefficients(reconstruct(B, A0), B) - A0).max() < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.data())
def test_roundtrip_property(n, data):
    k = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, 2 ** 31))
    r = np.random.default_rng(seed)
    B = dct_basis(n, k)
    assert np.abs(B.T @ B - np.eye(k)).max() < 1e-10
    traj = r.normal(size=(3, n, 3))
    X = stack_trajectories(traj)
    np.testing.assert_array_equal(unstack_trajectories(X), traj)
    A = fit_coefficients(X, B)
    # projection is idempotent
    X1 = reconstruct(B, A)
    assert np.abs(reconstruct(B, fit_coefficients(X1, B)) - X1).max() < 1e-10


def test_motion_basis_dct():
    mb = MotionBasis.dct(30, 10, 5, 4)
    assert mb.n_frames == 30 and mb.sizes == (10, 5, 4)


def test_speed():
    t0 = time.perf_counter()
    for n in (4, 30, 100, 512):
        dct_basis(n, n)
    assert time.perf_counter() - t0 < 1.0
