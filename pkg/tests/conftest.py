import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, cond=50.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(-0.5, 0.5, n) * np.log(cond))
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)
