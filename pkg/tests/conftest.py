import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("ci", max_examples=60, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def random_psd(rng, d, lo=0.3, hi=2.0):
    """Random symmetric PSD matrix with eigenvalues in [lo, hi]."""
    Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    w = rng.uniform(lo, hi, d)
    return Q @ np.diag(w) @ Q.T


def random_stochastic(rng, n):
    M = rng.random((n, n)) + 0.05
    return M / M.sum(axis=1, keepdims=True)


def random_simplex(rng, n):
    v = rng.exponential(1.0, n)
    return v / v.sum()
