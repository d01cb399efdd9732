"""Error-decay rate functions for the consensus states.

For a constant weight matrix with left Perron vector a, the common rate
function of all nodes is the conjugate of lambda -> sum_j Lambda_j(a_j lambda).
Gaussian observations give it in closed form; anything else goes through the
numeric conjugate. Isolation (I) and fusion (N I) rates bound it from below
and above when the observations are i.i.d. across nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from .observation_models import (
    ClosedFormUnavailable,
    GaussianModel,
    LmgfOracle,
    ObservationModel,
    conjugate_closed_form,
    conjugate_numeric,
    lmgf,
    lmgf_gradient,
    lmgf_hessian,
    mean_of,
    model_oracle,
)

__all__ = [
    "GaussianQuadraticRate",
    "NumericConjugateRate",
    "ScaledRate",
    "RateFunction",
    "tilde_lmgf",
    "tilde_oracle",
    "tilde_gaussian_rate_function",
    "tilde_rate_gaussian",
    "tilde_rate_numeric",
    "rate_over_ball_complement",
    "isolation_fusion_rates",
    "check_sandwich",
    "conjugate",
    "symmetric_lambda_max",
    "mixture_mean",
    "mixture_covariance",
]

SIMPLEX_TOL = 1e-9
LAMBDA_MAX_TOL = 1e-12
_POWER_SEED = 0xD1B54A32D192ED03


def _check_simplex(a, n: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (n,):
        raise ValueError(f"expected a weight per model ({n}), got shape {a.shape}")
    if a.min() < -SIMPLEX_TOL or abs(a.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("weights must lie on the probability simplex")
    return np.clip(a, 0.0, None)


def conjugate(model: ObservationModel, x) -> float:
    """I(x) for one model: closed form when available, numeric ascent otherwise."""
    try:
        return conjugate_closed_form(model, x)
    except ClosedFormUnavailable:
        return conjugate_numeric(model_oracle(model), x)


def symmetric_lambda_max(S, tol: float = LAMBDA_MAX_TOL, max_iter: int = 20_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Falls back to the dense symmetric eigensolver if the iteration has not met
    the Rayleigh-residual tolerance within the budget (near-tied eigenvalues).
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    d = S.shape[0]
    if d == 1:
        return float(S[0, 0])
    rng = np.random.Generator(np.random.Philox(key=np.array([_POWER_SEED, 0], dtype=np.uint64)))
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = S @ v
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            return 0.0
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * max(1.0, abs(lam)):
            return lam
        v = w / nw
    return float(np.linalg.eigvalsh(S)[-1])


def mixture_mean(models: Sequence[ObservationModel], a) -> np.ndarray:
    a = _check_simplex(a, len(models))
    return sum(aj * mean_of(m) for aj, m in zip(a, models))


def mixture_covariance(models: Sequence[GaussianModel], a) -> np.ndarray:
    a = _check_simplex(a, len(models))
    for m in models:
        if not isinstance(m, GaussianModel):
            raise ValueError("covariance mixing requires Gaussian models")
    return sum(aj**2 * m.cov for aj, m in zip(a, models))


def tilde_lmgf(models: Sequence[ObservationModel], a, lam) -> float:
    """Combined log-MGF sum_j Lambda_j(a_j lambda) of the a-weighted observation mix."""
    a = _check_simplex(a, len(models))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return float(sum(lmgf(m, aj * lam) for aj, m in zip(a, models)))


def tilde_oracle(models: Sequence[ObservationModel], a) -> LmgfOracle:
    a = _check_simplex(a, len(models))
    models = list(models)
    d = models[0].dimension

    def value(lam):
        return float(sum(lmgf(m, aj * lam) for aj, m in zip(a, models)))

    def grad(lam):
        return sum(aj * lmgf_gradient(m, aj * lam) for aj, m in zip(a, models))

    def hess(lam):
        return sum(aj**2 * lmgf_hessian(m, aj * lam) for aj, m in zip(a, models))

    return LmgfOracle(value=value, grad=grad, hess=hess, dimension=d)


@dataclass(frozen=True, eq=False)
class GaussianQuadraticRate:
    """Closed-form rate (1/2)(x - m)^T S^+ (x - m) on range(S), +inf off it."""

    mean: np.ndarray
    cov: np.ndarray
    pseudo: bool

    def evaluate(self, x) -> float:
        return conjugate_closed_form(GaussianModel(self.mean, self.cov), x)

    __call__ = evaluate


@dataclass(frozen=True, eq=False)
class NumericConjugateRate:
    """Rate via the numeric conjugate of the combined log-MGF."""

    models: Tuple[ObservationModel, ...]
    a: np.ndarray

    def evaluate(self, x) -> float:
        return conjugate_numeric(tilde_oracle(self.models, self.a), x)

    __call__ = evaluate


@dataclass(frozen=True, eq=False)
class ScaledRate:
    """A positive multiple of another rate function (e.g. the fusion rate N I)."""

    base: "RateFunction"
    factor: float

    def __post_init__(self):
        if self.factor <= 0:
            raise ValueError("scale factor must be positive")

    def evaluate(self, x) -> float:
        val = self.base.evaluate(x)
        return math.inf if math.isinf(val) else self.factor * val

    __call__ = evaluate


RateFunction = Union[GaussianQuadraticRate, NumericConjugateRate, ScaledRate]


def tilde_gaussian_rate_function(models: Sequence[GaussianModel], a) -> GaussianQuadraticRate:
    m_t = mixture_mean(models, a)
    S_t = mixture_covariance(models, a)
    w = np.linalg.eigvalsh(S_t)
    wmax = w.max(initial=0.0)
    pseudo = bool(w.min(initial=0.0) <= 1e-10 * wmax)
    return GaussianQuadraticRate(mean=m_t, cov=S_t, pseudo=pseudo)


def tilde_rate_gaussian(models: Sequence[GaussianModel], a, x) -> float:
    """Closed-form combined rate for per-node Gaussian models."""
    return tilde_gaussian_rate_function(models, a).evaluate(x)


def tilde_rate_numeric(models: Sequence[ObservationModel], a, x) -> float:
    """Combined rate through the numeric Fenchel-Legendre transform."""
    return conjugate_numeric(tilde_oracle(models, a), x)


def rate_over_ball_complement(models: Sequence[GaussianModel], a, zeta: float) -> float:
    """inf of the combined Gaussian rate outside the ball of radius zeta at the mean.

    Requires equal means across models (the ball is centered at the common
    mean); the infimum is zeta^2 / (2 lambda_max(S~)).
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    a = _check_simplex(a, len(models))
    for m in models:
        if not isinstance(m, GaussianModel):
            raise ValueError("ball-complement rate requires Gaussian models")
    means = np.stack([m.mean for m in models])
    if np.max(np.abs(means - means[0])) > 1e-9:
        raise ValueError("ball-complement rate requires equal means across models")
    S_t = mixture_covariance(models, a)
    lam_max = symmetric_lambda_max(S_t)
    if lam_max <= 0:
        raise ValueError("combined covariance is zero; the rate is infinite")
    return zeta**2 / (2.0 * lam_max)


def isolation_fusion_rates(model: ObservationModel, N: int, x) -> Tuple[float, float]:
    """(I(x), N I(x)): rates of a lone node and of a fusion center over N i.i.d. nodes."""
    if N < 1:
        raise ValueError("N must be >= 1")
    base = conjugate(model, x)
    return base, math.inf if math.isinf(base) else N * base


def check_sandwich(model: ObservationModel, a, x) -> Tuple[float, float, float]:
    """(I(x), I~(x), N I(x)) for N i.i.d. copies of `model` mixed by a."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    N = a.shape[0]
    models = [model] * N
    if isinstance(model, GaussianModel):
        mid = tilde_rate_gaussian(models, a, x)
    else:
        mid = tilde_rate_numeric(models, a, x)
    lo, hi = isolation_fusion_rates(model, N, x)
    return lo, mid, hi
