import numpy as np
import pytest


def random_spd(rng, n, lo=1e-2, hi=1e2):
    vals = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return (q * vals) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
