import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_spd
from mgcap.errors import DimensionMismatch
from mgcap.linalg import sym_eig
from mgcap.spectral import (MODES, check_mode, loewner_matrix, normalize_backward,
                            normalize_forward, rectify)

A = np.array([[2.0, 1.0], [1.0, 2.0]])


def test_rectify_examples():
    r = rectify([2.0, 1e-7])
    np.testing.assert_array_equal(r.values, [2.0, 1e-5])
    np.testing.assert_array_equal(r.mask, [1.0, 0.0])
    r = rectify([3.0, 1.0])
    np.testing.assert_array_equal(r.values, [3.0, 1.0])
    np.testing.assert_array_equal(r.mask, [1.0, 1.0])
    r = rectify(sym_eig(np.diag([-0.5, 0.2])))
    np.testing.assert_array_equal(r.values, [0.2, 1e-5])
    np.testing.assert_array_equal(r.mask, [1.0, 0.0])


def test_rectify_upper_clip_and_bounds():
    r = rectify([1e6, 1.0])
    np.testing.assert_array_equal(r.values, [1e5, 1.0])
    np.testing.assert_array_equal(r.mask, [0.0, 1.0])
    with pytest.raises(ValueError):
        rectify([1.0], 1.0, 1.0)


def test_loewner_matrix():
    np.testing.assert_array_equal(loewner_matrix([3.0, 1.0]), [[0.0, 0.5], [-0.5, 0.0]])
    q = loewner_matrix([2.0, 2.0, 1.0])
    assert q[0, 1] == 0.0 and q[1, 0] == 0.0
    assert np.all(np.isfinite(q))
    rng = np.random.default_rng(0)
    q = loewner_matrix(np.sort(rng.normal(size=6))[::-1])
    np.testing.assert_array_equal(q, -q.T)


def test_loewner_relative_tolerance():
    big = 1e8
    assert loewner_matrix([big + 1e-4, big])[0, 1] == 0.0
    assert loewner_matrix([1.0 + 1e-4, 1.0])[0, 1] != 0.0


def test_forward_examples():
    np.testing.assert_allclose(normalize_forward(np.eye(5), "log_e")[0], np.zeros((5, 5)), atol=1e-15)
    np.testing.assert_allclose(normalize_forward(np.eye(5), "sqrt_e")[0], np.eye(5))
    out, _ = normalize_forward(A, "log_e")
    np.testing.assert_allclose(out, np.full((2, 2), 0.54931), atol=1e-5)
    out, _ = normalize_forward(A, "sqrt_e")
    np.testing.assert_allclose(out, [[1.36603, 0.36603], [0.36603, 1.36603]], atol=1e-5)
    np.testing.assert_allclose(out @ out, A, atol=1e-10)


def test_identity_mode_passthrough(rng):
    g = random_spd(rng, 4)
    out, cache = normalize_forward(g, "identity")
    np.testing.assert_array_equal(out, g)
    up = rng.normal(size=(4, 4))
    np.testing.assert_allclose(normalize_backward(cache, up), (up + up.T) / 2)


def test_mode_validation():
    assert set(MODES) == {"log_e", "sqrt_e", "identity"}
    with pytest.raises(ValueError):
        check_mode("sqrt")
    with pytest.raises(DimensionMismatch):
        normalize_forward(np.ones((2, 3)))
    _, cache = normalize_forward(A)
    with pytest.raises(DimensionMismatch):
        normalize_backward(cache, np.eye(3))


def test_cache_round_trip(rng):
    g = random_spd(rng, 6)
    _, cache = normalize_forward(g, "log_e")
    u, nu = cache.eig.eigvecs, cache.eig.eigvals
    np.testing.assert_allclose((u * nu) @ u.T, cache.input, atol=1e-9)


def test_degenerate_two_identity():
    _, cache = normalize_forward(2.0 * np.eye(4), "sqrt_e")
    grad = normalize_backward(cache, np.eye(4))
    assert np.all(np.isfinite(grad))
    np.testing.assert_allclose(grad, np.eye(4) / (2 * np.sqrt(2)), atol=1e-6)


def _fd_check(g, mode, rng, trials=1):
    n = g.shape[0]
    _, cache = normalize_forward(g, mode)
    h = 1e-3 * cache.eig.eigvals.min()
    worst = 0.0
    for _ in range(trials):
        w = rng.normal(size=(n, n))
        d = rng.normal(size=(n, n))
        d = (d + d.T) / 2
        d /= np.linalg.norm(d, 2)
        a = np.sum(normalize_backward(cache, w) * d)

        def f(t):
            return np.sum(w * normalize_forward(g + t * d, mode)[0])

        num = (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h)
        worst = max(worst, abs(a - num) / max(abs(a), abs(num)))
    return worst


@pytest.mark.parametrize("mode", ["log_e", "sqrt_e"])
@pytest.mark.parametrize("n", [3, 8, 33])
def test_backward_matches_finite_differences(mode, n):
    rng = np.random.default_rng(n)
    worst = max(_fd_check(random_spd(rng, n, 0.1, 10.0), mode, rng) for _ in range(10))
    assert worst <= 1e-5


def test_log_e_with_eigen_gap_100_trials(rng):
    worst = 0.0
    for _ in range(100):
        vals = 1.0 + 0.2 * np.arange(4) + rng.uniform(0, 0.05, 4)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        worst = max(worst, _fd_check((q * vals) @ q.T, "log_e", rng))
    assert worst <= 1e-5


def test_clamped_direction_has_zero_derivative(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    g = (q * [2.0, 1.0, 1e-7]) @ q.T
    _, cache = normalize_forward(g, "log_e")
    u = cache.eig.eigvecs[:, 2]
    grad = normalize_backward(cache, rng.normal(size=(3, 3)))
    assert abs(u @ grad @ u) < 1e-9


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 10), kind=st.sampled_from(["scaled_identity", "rank_one", "random", "zero"]),
       scale=st.sampled_from([1e-4, 1.0, 1e3]), mode=st.sampled_from(["log_e", "sqrt_e"]),
       seed=st.integers(0, 2 ** 31))
def test_backward_always_finite(n, kind, scale, mode, seed):
    rng = np.random.default_rng(seed)
    if kind == "scaled_identity":
        g = scale * np.eye(n)
    elif kind == "rank_one":
        v = rng.normal(size=n)
        g = scale * np.outer(v, v) + 1e-4 * np.eye(n)
    elif kind == "zero":
        g = np.zeros((n, n))
    else:
        g = rng.normal(size=(n, n)) * scale
        g = g + g.T
    _, cache = normalize_forward(g, mode)
    assert np.all(np.isfinite(normalize_backward(cache, rng.normal(size=(n, n)))))


def test_batched_forward_matches_single(rng):
    gs = np.stack([random_spd(rng, 5) for _ in range(3)])
    out, cache = normalize_forward(gs, "sqrt_e")
    up = rng.normal(size=gs.shape)
    grads = normalize_backward(cache, up)
    for k in range(3):
        o, c = normalize_forward(gs[k], "sqrt_e")
        np.testing.assert_allclose(out[k], o, atol=1e-14)
        np.testing.assert_allclose(grads[k], normalize_backward(c, up[k]), atol=1e-12)
