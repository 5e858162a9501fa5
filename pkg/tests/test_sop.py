import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgcap.errors import DimensionMismatch
from mgcap.sop import (SopConfig, covariance, covariance_backward, feature_mean, gaussian_embed,
                       gaussian_embed_backward, pool_backward, pool_forward, trace_ridge,
                       trace_ridge_backward)

F = np.array([[1.0, 2.0], [3.0, 4.0]])
EMBED = np.array([[2.5, 5.5, 1.5], [5.5, 12.5, 3.5], [1.5, 3.5, 1.0]])


def fd(fn, x, d, h=1e-5):
    return (fn(x + h * d) - fn(x - h * d)) / (2 * h)


def test_covariance_example():
    np.testing.assert_allclose(covariance(F), [[0.25, 0.25], [0.25, 0.25]])
    ref = np.cov(F, bias=True)
    np.testing.assert_allclose(covariance(F), ref)


def test_covariance_constant_columns_is_zero():
    f = np.tile(np.array([[1.0], [-2.0], [3.0]]), (1, 7))
    np.testing.assert_array_equal(covariance(f), np.zeros((3, 3)))


def test_single_location_gives_zero():
    np.testing.assert_array_equal(covariance(np.ones((3, 1))), np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(c=st.integers(1, 8), n=st.integers(1, 30), seed=st.integers(0, 2 ** 31))
def test_covariance_psd(c, n, seed):
    f = np.random.default_rng(seed).normal(size=(c, n)) * 3
    assert np.linalg.eigvalsh(covariance(f)).min() >= -1e-10


def test_covariance_backward_examples():
    np.testing.assert_allclose(covariance_backward(F, np.eye(2)), [[-0.5, 0.5], [-0.5, 0.5]])
    np.testing.assert_array_equal(covariance_backward(F, np.zeros((2, 2))), np.zeros((2, 2)))
    const = np.tile(np.array([[1.0], [2.0]]), (1, 5))
    g = covariance_backward(const, np.array([[1.0, 2.0], [2.0, -1.0]]))
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        covariance_backward(F, np.eye(3))


def test_gaussian_embed_examples():
    c = np.array([[0.25, 0.25], [0.25, 0.25]])
    np.testing.assert_allclose(gaussian_embed(c, [1.5, 3.5]), EMBED)
    np.testing.assert_array_equal(gaussian_embed(np.zeros((3, 3)), np.zeros(3)), np.diag([0, 0, 0, 1.0]))
    with pytest.raises(DimensionMismatch):
        gaussian_embed(c, [1.0, 2.0, 3.0])


def test_feature_mean_conventions():
    np.testing.assert_allclose(feature_mean(F), [1.5, 3.5])
    np.testing.assert_allclose(feature_mean(F, "sum"), [3.0, 7.0])
    with pytest.raises(ValueError):
        SopConfig(mean_convention="median")
    with pytest.raises(ValueError):
        SopConfig(lam=-1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_embed_corner_exactly_one(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(4, 4)) * 1e3
    assert gaussian_embed(c + c.T, rng.normal(size=4) * 1e3)[4, 4] == 1.0


def test_gaussian_embed_backward_examples():
    c = np.array([[0.25, 0.25], [0.25, 0.25]])
    mu = np.array([1.5, 3.5])
    dc, dmu = gaussian_embed_backward(c, mu, np.zeros((3, 3)))
    assert not dc.any() and not dmu.any()
    dc, dmu = gaussian_embed_backward(c, np.zeros(2), np.eye(3))
    np.testing.assert_array_equal(dc, np.eye(2))
    np.testing.assert_array_equal(dmu, np.zeros(2))
    # a single border cell counts once per mirrored occurrence under symmetrization
    up = np.zeros((3, 3))
    up[0, 2] = 1.0
    _, dmu = gaussian_embed_backward(c, mu, up + up.T)
    assert dmu[0] == 2.0 and dmu[1] == 0.0


def test_trace_ridge_examples():
    out = trace_ridge(EMBED, 1e-4)
    np.testing.assert_allclose(np.diag(out), [2.5016, 12.5016, 1.0016])
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_array_equal(out[off], EMBED[off])
    np.testing.assert_array_equal(trace_ridge(EMBED, 0.0), EMBED)


def test_trace_ridge_backward_examples():
    np.testing.assert_allclose(trace_ridge_backward(None, 1e-4, np.eye(3)), np.eye(3) * (1 + 3e-4))
    up = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(trace_ridge_backward(None, 0.0, up), up)
    traceless = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_array_equal(trace_ridge_backward(None, 0.5, traceless), traceless)


def test_ridge_makes_embedding_positive_definite(rng):
    for _ in range(100):
        f = rng.normal(size=(5, 9))
        g = gaussian_embed(covariance(f), feature_mean(f))
        lam = 1e-4
        assert np.linalg.eigvalsh(trace_ridge(g, lam)).min() >= lam * np.trace(g) - 1e-10


@pytest.mark.parametrize("use_gaussian,conv", [(True, "mean"), (True, "sum"), (False, "mean")])
def test_backward_matches_finite_differences(rng, use_gaussian, conv):
    cfg = SopConfig(1e-4, use_gaussian, conv)
    worst = 0.0
    for _ in range(100):
        f = rng.normal(size=(2, 4, 10))
        w = rng.normal(size=(2, 5, 5) if use_gaussian else (2, 4, 4))
        d = rng.normal(size=f.shape)
        _, cache = pool_forward(f, cfg)
        a = np.sum(pool_backward(cache, w, cfg) * d)
        n = fd(lambda x: np.sum(w * pool_forward(x, cfg)[0]), f, d)
        worst = max(worst, abs(a - n) / max(abs(a), abs(n)))
    assert worst <= 1e-5


def test_pool_output_order():
    assert SopConfig().output_order(32) == 33
    assert SopConfig(use_gaussian=False).output_order(32) == 32
    g, _ = pool_forward(np.random.default_rng(0).normal(size=(3, 32, 16)), SopConfig())
    assert g.shape == (3, 33, 33)
