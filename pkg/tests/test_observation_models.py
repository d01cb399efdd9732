import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netrates.observation_models import (
    ClosedFormUnavailable,
    DiscreteModel,
    GaussianModel,
    conjugate_closed_form,
    conjugate_numeric,
    lmgf,
    lmgf_gradient,
    mean_of,
    model_from_dict,
    model_oracle,
    model_to_dict,
    sample,
)
from conftest import random_psd, random_simplex

STD_GAUSS_2D = GaussianModel(mean=np.zeros(2), cov=np.eye(2))
COIN = DiscreteModel(atoms=np.array([[0.0], [1.0]]), pmf=[0.5, 0.5])
CANONICAL2 = DiscreteModel(atoms=np.eye(2), pmf=[0.5, 0.5])


def test_construction_validation():
    with pytest.raises(ValueError):
        GaussianModel(mean=[0.0, 0.0], cov=[[1.0, 0.5], [0.4, 1.0]])  # asymmetric
    with pytest.raises(ValueError):
        GaussianModel(mean=[0.0], cov=[[-1.0]])  # not PSD
    with pytest.raises(ValueError):
        DiscreteModel(atoms=[[0.0], [1.0]], pmf=[0.6, 0.6])  # sums to 1.2
    with pytest.raises(ValueError):
        DiscreteModel(atoms=[[1.0], [1.0]], pmf=[0.5, 0.5])  # duplicate atoms


def test_lmgf_gaussian_quadratic():
    assert lmgf(STD_GAUSS_2D, [1.0, 0.0]) == pytest.approx(0.5, abs=1e-14)
    m = GaussianModel(mean=[0.3, -0.2], cov=[[2.0, 0.5], [0.5, 1.0]])
    lam = np.array([0.7, -1.1])
    expected = m.mean @ lam + 0.5 * lam @ m.cov @ lam
    assert lmgf(m, lam) == pytest.approx(expected, abs=1e-14)


def test_lmgf_discrete_direct():
    # direct evaluation of log sum p_l exp(lam . a_l)
    assert lmgf(COIN, [1.0]) == pytest.approx(math.log((1 + math.e) / 2), abs=1e-12)
    assert lmgf(COIN, [1.0]) == pytest.approx(0.62011450695828, abs=1e-11)


def test_lmgf_overflow_safe():
    big = lmgf(COIN, [2000.0])
    assert np.isfinite(big)
    assert big == pytest.approx(2000.0 + math.log(0.5), rel=1e-12)


def test_lmgf_zero_at_origin():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = rng.integers(1, 4)
        g = GaussianModel(mean=rng.standard_normal(d), cov=random_psd(rng, d))
        assert abs(lmgf(g, np.zeros(d))) <= 1e-14
        atoms = rng.standard_normal((4, d))
        dm = DiscreteModel(atoms=atoms, pmf=random_simplex(rng, 4))
        assert abs(lmgf(dm, np.zeros(d))) <= 1e-14


def test_lmgf_dimension_mismatch():
    with pytest.raises(ValueError):
        lmgf(STD_GAUSS_2D, [1.0])
    with pytest.raises(ValueError):
        lmgf(STD_GAUSS_2D, [np.inf, 0.0])


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_lmgf_convexity(seed, theta):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    if rng.random() < 0.5:
        model = GaussianModel(mean=rng.standard_normal(d), cov=random_psd(rng, d))
    else:
        model = DiscreteModel(atoms=rng.standard_normal((3, d)), pmf=random_simplex(rng, 3))
    l1, l2 = rng.standard_normal(d), rng.standard_normal(d)
    lhs = lmgf(model, theta * l1 + (1 - theta) * l2)
    rhs = theta * lmgf(model, l1) + (1 - theta) * lmgf(model, l2)
    assert lhs <= rhs + 1e-10


@given(st.integers(0, 2**32 - 1))
def test_lmgf_simplex_sandwich(seed):
    # N Lambda(lam/N) <= sum_i Lambda(alpha_i lam) <= Lambda(lam)
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    N = int(rng.integers(2, 7))
    if rng.random() < 0.5:
        model = GaussianModel(mean=rng.standard_normal(d), cov=random_psd(rng, d))
    else:
        model = DiscreteModel(atoms=rng.standard_normal((4, d)), pmf=random_simplex(rng, 4))
    alpha = random_simplex(rng, N)
    lam = 3.0 * rng.standard_normal(d)
    mid = sum(lmgf(model, a * lam) for a in alpha)
    assert N * lmgf(model, lam / N) <= mid + 1e-10
    assert mid <= lmgf(model, lam) + 1e-10


def test_conjugate_gaussian_closed_form():
    assert conjugate_closed_form(STD_GAUSS_2D, [1.0, 0.0]) == pytest.approx(0.5, abs=1e-14)
    m = GaussianModel(mean=[0.4, 0.1], cov=[[2.0, 0.3], [0.3, 0.5]])
    assert conjugate_closed_form(m, m.mean) == pytest.approx(0.0, abs=1e-14)
    x = np.array([1.0, -0.5])
    y = x - m.mean
    expected = 0.5 * y @ np.linalg.solve(m.cov, y)
    assert conjugate_closed_form(m, x) == pytest.approx(expected, rel=1e-12)


def test_conjugate_gaussian_singular():
    # rank-1 covariance: finite along the range, +inf off it
    m = GaussianModel(mean=[0.0, 0.0], cov=[[1.0, 0.0], [0.0, 0.0]])
    assert conjugate_closed_form(m, [0.8, 0.0]) == pytest.approx(0.32, abs=1e-12)
    assert conjugate_closed_form(m, [0.0, 0.3]) == math.inf
    # point mass: zero only at the mean
    pm = GaussianModel(mean=[0.7], cov=[[0.0]])
    assert conjugate_closed_form(pm, [0.7]) == 0.0
    assert conjugate_closed_form(pm, [0.8]) == math.inf


def test_conjugate_discrete_canonical():
    assert conjugate_closed_form(CANONICAL2, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-14)
    assert conjugate_closed_form(CANONICAL2, [1.0, 0.0]) == pytest.approx(math.log(2), abs=1e-12)
    assert conjugate_closed_form(CANONICAL2, [0.7, 0.4]) == math.inf  # off simplex
    assert conjugate_closed_form(CANONICAL2, [1.2, -0.2]) == math.inf
    skew = DiscreteModel(atoms=np.eye(3), pmf=[0.5, 0.3, 0.2])
    x = np.array([0.2, 0.5, 0.3])
    expected = sum(xl * math.log(xl / pl) for xl, pl in zip(x, skew.pmf))
    assert conjugate_closed_form(skew, x) == pytest.approx(expected, rel=1e-12)


def test_conjugate_closed_form_unavailable():
    with pytest.raises(ClosedFormUnavailable):
        conjugate_closed_form(COIN, [0.5])  # atoms {0,1} are not the canonical basis


def test_conjugate_numeric_matches_gaussian():
    assert conjugate_numeric(model_oracle(STD_GAUSS_2D), [1.0, 0.0]) == pytest.approx(0.5, abs=1e-10)
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = int(rng.integers(1, 5))
        model = GaussianModel(mean=rng.standard_normal(d), cov=random_psd(rng, d))
        x = model.mean + rng.standard_normal(d)
        closed = conjugate_closed_form(model, x)
        numeric = conjugate_numeric(model_oracle(model), x)
        assert abs(closed - numeric) <= 1e-8


def test_conjugate_numeric_at_mean():
    for model in (STD_GAUSS_2D, COIN, CANONICAL2):
        val = conjugate_numeric(model_oracle(model), mean_of(model))
        assert val == pytest.approx(0.0, abs=1e-12)


def test_conjugate_numeric_boundary_and_outside():
    oracle = model_oracle(COIN)
    # hull boundary: supremum log(1/p) approached, not attained
    assert conjugate_numeric(oracle, [1.0]) == pytest.approx(math.log(2), abs=1e-6)
    assert conjugate_numeric(oracle, [0.0]) == pytest.approx(math.log(2), abs=1e-6)
    # outside the hull the iterates diverge
    assert conjugate_numeric(oracle, [1.5]) == math.inf
    assert conjugate_numeric(oracle, [-0.2]) == math.inf


def test_conjugate_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        model = GaussianModel(mean=rng.standard_normal(d), cov=random_psd(rng, d))
        x = rng.standard_normal(d) * 2
        assert conjugate_closed_form(model, x) >= 0.0


def test_sample_degenerate():
    rng = np.random.default_rng(0)
    pm = GaussianModel(mean=[1.0, -2.0], cov=np.zeros((2, 2)))
    assert np.array_equal(sample(pm, rng), [1.0, -2.0])
    point = DiscreteModel(atoms=[[3.0], [9.0]], pmf=[1.0, 0.0])
    for _ in range(10):
        assert sample(point, rng)[0] == 3.0


def test_sample_gaussian_clt():
    rng = np.random.default_rng(99)
    g = GaussianModel(mean=[0.0], cov=[[1.0]])
    draws = np.array([sample(g, rng)[0] for _ in range(100_000)])
    assert abs(draws.mean()) < 0.02  # 3 sigma / sqrt(K) is under 0.01


def test_sample_discrete_frequencies():
    rng = np.random.default_rng(5)
    m = DiscreteModel(atoms=[[0.0], [1.0], [2.0]], pmf=[0.2, 0.5, 0.3])
    draws = np.array([sample(m, rng)[0] for _ in range(20_000)])
    freqs = [(draws == v).mean() for v in (0.0, 1.0, 2.0)]
    assert np.allclose(freqs, [0.2, 0.5, 0.3], atol=0.02)


def test_sample_singular_covariance_stays_on_range():
    rng = np.random.default_rng(11)
    g = GaussianModel(mean=[0.0, 0.0], cov=[[1.0, 0.0], [0.0, 0.0]])
    draws = np.array([sample(g, rng) for _ in range(100)])
    assert np.all(draws[:, 1] == 0.0)
    assert draws[:, 0].std() > 0.5


def test_serialization_round_trip():
    for model in (
        GaussianModel(mean=[0.1, 0.2], cov=[[1.0, 0.2], [0.2, 2.0]]),
        DiscreteModel(atoms=[[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]], pmf=[0.2, 0.3, 0.5]),
    ):
        back = model_from_dict(model_to_dict(model))
        assert type(back) is type(model)
        if isinstance(model, GaussianModel):
            assert np.array_equal(back.mean, model.mean)
            assert np.array_equal(back.cov, model.cov)
        else:
            assert np.array_equal(back.atoms, model.atoms)
            assert np.array_equal(back.pmf, model.pmf)


def test_model_from_dict_shorthand_and_errors():
    g = model_from_dict({"kind": "gaussian", "mean": [0.5], "cov": 2.0})
    assert g.cov.shape == (1, 1)
    d = model_from_dict({"kind": "discrete", "atoms": [0.0, 1.0], "pmf": [0.5, 0.5]})
    assert d.atoms.shape == (2, 1)
    with pytest.raises(ValueError):
        model_from_dict({"kind": "poisson"})


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    for model in (
        GaussianModel(mean=[0.2, -0.4], cov=random_psd(rng, 2)),
        DiscreteModel(atoms=rng.standard_normal((4, 2)), pmf=random_simplex(rng, 4)),
    ):
        lam = rng.standard_normal(2)
        g = lmgf_gradient(model, lam)
        h = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (lmgf(model, lam + e) - lmgf(model, lam - e)) / (2 * h)
            assert g[k] == pytest.approx(fd, abs=1e-6)
