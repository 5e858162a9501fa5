import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_spd
from mgcap.errors import DimensionMismatch, NonFinite, NotSymmetric
from mgcap.linalg import (add, as_sym, frobenius_norm, hadamard, matmul, reconstruct, scale,
                          sym_eig, sym_eig_stack, trace, transpose)

S2 = 1 / np.sqrt(2)


def test_two_by_two_closed_form():
    e = sym_eig([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(e.eigvals, [3.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(e.eigvecs, [[S2, S2], [S2, -S2]], atol=1e-12)


def test_identity_gives_identity_vectors():
    e = sym_eig(np.eye(4))
    np.testing.assert_array_equal(e.eigvals, np.ones(4))
    np.testing.assert_array_equal(e.eigvecs, np.eye(4))


def test_diagonal_input():
    e = sym_eig(np.diag([5.0, 2.0, -1.0]))
    np.testing.assert_array_equal(e.eigvals, [5.0, 2.0, -1.0])
    np.testing.assert_array_equal(e.eigvecs, np.eye(3))


def test_diagonal_out_of_order_is_sorted():
    e = sym_eig(np.diag([-1.0, 5.0, 2.0]))
    np.testing.assert_array_equal(e.eigvals, [5.0, 2.0, -1.0])
    np.testing.assert_allclose(np.abs(e.eigvecs), [[0, 0, 1], [1, 0, 0], [0, 1, 0]])


def test_reconstruct_examples():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    e = sym_eig(a)
    np.testing.assert_allclose(reconstruct(e), a, atol=1e-12)
    np.testing.assert_allclose(reconstruct(sym_eig(np.eye(3)), np.square), np.eye(3))
    r = reconstruct(e, np.sqrt)
    np.testing.assert_allclose(r, [[1.36603, 0.36603], [0.36603, 1.36603]], atol=1e-5)
    np.testing.assert_allclose(r @ r, a, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 5, 17, 33, 64])
def test_invariants_random_spd(n):
    rng = np.random.default_rng(n)
    a = random_spd(rng, n)
    e = sym_eig(a)
    assert np.all(np.diff(e.eigvals) <= 0)
    u = e.eigvecs
    assert np.max(np.abs(u.T @ u - np.eye(n))) <= 1e-9
    assert np.max(np.abs(reconstruct(e) - a)) <= 1e-9 * max(1.0, np.max(np.abs(a)))


def test_matches_reference_eigenvalues(rng):
    a = random_spd(rng, 20)
    np.testing.assert_allclose(sym_eig(a).eigvals, np.sort(np.linalg.eigvalsh(a))[::-1], rtol=1e-10)


def test_sign_convention(rng):
    e = sym_eig(random_spd(rng, 8))
    for col in e.eigvecs.T:
        first = col[np.abs(col) > 1e-12][0]
        assert first > 0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), t=st.floats(-50, 50), seed=st.integers(0, 2 ** 31))
def test_shift_property(n, t, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    a = a + a.T
    np.testing.assert_allclose(sym_eig(a + t * np.eye(n)).eigvals, sym_eig(a).eigvals + t, atol=1e-9)


def test_deterministic_bytes(rng):
    a = random_spd(rng, 33)
    e1, e2 = sym_eig(a), sym_eig(a.copy())
    assert e1.eigvals.tobytes() == e2.eigvals.tobytes()
    assert e1.eigvecs.tobytes() == e2.eigvecs.tobytes()


def test_batched_matches_single(rng):
    mats = np.stack([random_spd(rng, 6) for _ in range(4)])
    vals, vecs = sym_eig_stack(mats)
    for k in range(4):
        e = sym_eig(mats[k])
        np.testing.assert_array_equal(vals[k], e.eigvals)
        np.testing.assert_array_equal(vecs[k], e.eigvecs)


def test_rejects_bad_input():
    with pytest.raises(NotSymmetric):
        sym_eig([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(NonFinite):
        sym_eig([[np.nan, 0.0], [0.0, 1.0]])
    with pytest.raises(DimensionMismatch):
        sym_eig(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        as_sym(np.ones(3))


def test_plumbing_ops():
    g = np.array([[2.5, 5.5, 1.5], [5.5, 12.5, 3.5], [1.5, 3.5, 1.0]])
    assert trace(g) == 16.0
    m = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(hadamard(np.eye(3), m), np.diag(np.diag(m)))
    np.testing.assert_array_equal(transpose(transpose(m)), m)
    np.testing.assert_array_equal(matmul(np.eye(3), m), m)
    np.testing.assert_array_equal(add(m, m), scale(m, 2.0))
    assert frobenius_norm(np.eye(4)) == 2.0
    with pytest.raises(DimensionMismatch):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        add(np.ones((2, 2)), np.ones((3, 3)))
    with pytest.raises(DimensionMismatch):
        trace(np.ones((2, 3)))
