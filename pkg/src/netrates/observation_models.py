"""Observation distributions, their log-moment generating functions and conjugates.

Two families are first-class: Gaussian (mean vector + PSD covariance) and
discrete (finite atom set + pmf). Both have everywhere-finite log-MGFs, which
is what the downstream rate machinery requires. The Fenchel-Legendre conjugate
is available in closed form where one exists and through a Newton ascent
otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "GaussianModel",
    "DiscreteModel",
    "ObservationModel",
    "ClosedFormUnavailable",
    "NumericFailure",
    "LmgfOracle",
    "lmgf",
    "conjugate_closed_form",
    "conjugate_numeric",
    "model_oracle",
    "sample",
    "model_to_dict",
    "model_from_dict",
]

SYMMETRY_TOL = 1e-12
EIGENVALUE_CLAMP = -1e-12
RANK_TOL_FACTOR = 1e-10       # eigenvalue below this fraction of the largest counts as zero
RANGE_RESIDUAL_TOL = 1e-9     # relative residual for the "x in range(S)" test
GRADIENT_TOL = 1e-10
OBJECTIVE_TOL = 1e-12
DIVERGENCE_NORM = 1e6         # iterate norm beyond which the supremum is declared infinite


class ClosedFormUnavailable(Exception):
    """No closed-form conjugate for this model; use the numeric path."""


class NumericFailure(RuntimeError):
    """The log-MGF evaluator produced a non-finite value."""

    def __init__(self, lam: np.ndarray):
        self.lam = np.asarray(lam)
        super().__init__(f"non-finite log-MGF value at lambda={self.lam!r}")


def _as_vector(x, dim: Optional[int] = None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Gaussian observation N(mean, cov); cov may be singular (PSD)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = _as_vector(self.mean)
        S = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if S.shape != (m.shape[0], m.shape[0]):
            raise ValueError(f"covariance shape {S.shape} does not match mean of length {m.shape[0]}")
        if not np.allclose(S, S.T, atol=SYMMETRY_TOL, rtol=0.0):
            raise ValueError("covariance must be symmetric")
        S = 0.5 * (S + S.T)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", S)
        w = np.linalg.eigvalsh(S)
        if w.min(initial=0.0) < EIGENVALUE_CLAMP:
            raise ValueError(f"covariance not PSD: min eigenvalue {w.min()}")

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def _eigh(self):
        w, V = np.linalg.eigh(self.cov)
        return np.clip(w, 0.0, None), V

    @cached_property
    def _rank_mask(self) -> np.ndarray:
        w, _ = self._eigh
        wmax = w.max(initial=0.0)
        return w > RANK_TOL_FACTOR * wmax

    @cached_property
    def sampling_factor(self) -> np.ndarray:
        """L with L L^T = cov, via the symmetric eigendecomposition (valid for singular cov)."""
        w, V = self._eigh
        return V * np.sqrt(w)


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """Finite-support observation: atoms a_1..a_L in R^d with probabilities pmf."""

    atoms: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        if A.ndim != 2:
            raise ValueError("atoms must be an (L, d) array")
        p = _as_vector(self.pmf, A.shape[0])
        if p.min() < -SYMMETRY_TOL:
            raise ValueError("pmf entries must be nonnegative")
        if abs(p.sum() - 1.0) > SYMMETRY_TOL:
            raise ValueError(f"pmf must sum to 1, got {p.sum()}")
        p = np.clip(p, 0.0, None)
        for i in range(A.shape[0]):
            for j in range(i + 1, A.shape[0]):
                if np.array_equal(A[i], A[j]):
                    raise ValueError(f"atoms {i} and {j} coincide")
        object.__setattr__(self, "atoms", A)
        object.__setattr__(self, "pmf", p)

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]

    @cached_property
    def _support(self):
        mask = self.pmf > 0.0
        return self.atoms[mask], self.pmf[mask]

    @cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    @property
    def is_canonical(self) -> bool:
        """True when the atoms are exactly the canonical basis of R^L (L = d)."""
        L, d = self.atoms.shape
        return L == d and np.array_equal(self.atoms, np.eye(d))


ObservationModel = Union[GaussianModel, DiscreteModel]


def mean_of(model: ObservationModel) -> np.ndarray:
    if isinstance(model, GaussianModel):
        return model.mean.copy()
    return model.pmf @ model.atoms


def lmgf(model: ObservationModel, lam) -> float:
    """Log-moment generating function Lambda(lam) = log E[exp(lam . Z)]."""
    lam = _as_vector(lam, model.dimension)
    if not np.all(np.isfinite(lam)):
        raise ValueError("lambda must be finite")
    if isinstance(model, GaussianModel):
        return float(model.mean @ lam + 0.5 * lam @ model.cov @ lam)
    atoms, pmf = model._support
    # max-shift keeps the exponentials in range for large |lam|
    scores = atoms @ lam + np.log(pmf)
    top = scores.max()
    return float(top + math.log(np.exp(scores - top).sum()))


def _discrete_grad_hess(model: DiscreteModel, lam: np.ndarray):
    atoms, pmf = model._support
    scores = atoms @ lam + np.log(pmf)
    w = np.exp(scores - scores.max())
    w /= w.sum()
    g = w @ atoms
    H = (atoms * w[:, None]).T @ atoms - np.outer(g, g)
    return g, H


def lmgf_gradient(model: ObservationModel, lam) -> np.ndarray:
    lam = _as_vector(lam, model.dimension)
    if isinstance(model, GaussianModel):
        return model.mean + model.cov @ lam
    g, _ = _discrete_grad_hess(model, lam)
    return g


def lmgf_hessian(model: ObservationModel, lam) -> np.ndarray:
    lam = _as_vector(lam, model.dimension)
    if isinstance(model, GaussianModel):
        return model.cov.copy()
    _, H = _discrete_grad_hess(model, lam)
    return H


def conjugate_closed_form(model: ObservationModel, x) -> float:
    """Fenchel-Legendre conjugate I(x) = sup_lam x.lam - Lambda(lam), closed form.

    Gaussian: quadratic in the (pseudo)inverse covariance, +inf off the range
    of a singular covariance. Discrete with canonical-basis atoms: relative
    entropy on the simplex, +inf off it. Raises ClosedFormUnavailable for
    other atom configurations.
    """
    x = _as_vector(x, model.dimension)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    if isinstance(model, GaussianModel):
        y = x - model.mean
        w, V = model._eigh
        mask = model._rank_mask
        yv = V.T @ y
        off_range = yv[~mask]
        ynorm = np.linalg.norm(y)
        if off_range.size and np.linalg.norm(off_range) > RANGE_RESIDUAL_TOL * max(ynorm, 1e-300):
            return math.inf
        kept = yv[mask]
        return float(0.5 * np.sum(kept * kept / w[mask]))
    if not model.is_canonical:
        raise ClosedFormUnavailable(
            "discrete conjugate is closed-form only for canonical-basis atoms"
        )
    p = model.pmf
    if np.any(x < -SYMMETRY_TOL) or abs(x.sum() - 1.0) > 1e-9:
        return math.inf
    xc = np.clip(x, 0.0, None)
    total = 0.0
    for xl, pl in zip(xc, p):
        if xl == 0.0:
            continue  # 0 log 0 := 0
        if pl == 0.0:
            return math.inf
        total += xl * math.log(xl / pl)
    return float(total)


@dataclass(frozen=True)
class LmgfOracle:
    """Callable bundle for a log-MGF: value, gradient, and optional Hessian."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dimension: int = 1

    def __call__(self, lam: np.ndarray) -> float:
        return self.value(lam)


def model_oracle(model: ObservationModel) -> LmgfOracle:
    return LmgfOracle(
        value=lambda lam: lmgf(model, lam),
        grad=lambda lam: lmgf_gradient(model, lam),
        hess=lambda lam: lmgf_hessian(model, lam),
        dimension=model.dimension,
    )


def conjugate_numeric(
    lmgf_evaluator: LmgfOracle,
    x,
    max_iter: int = 500,
) -> float:
    """Conjugate sup_lam x.lam - Lambda(lam) by Newton ascent from lam = 0.

    Uses the oracle Hessian when present (gradient ascent otherwise), with
    Armijo backtracking on the concave objective. Stops when the gradient
    norm falls below GRADIENT_TOL or the objective stalls below OBJECTIVE_TOL.
    Iterates escaping DIVERGENCE_NORM mean x lies outside the closure of the
    gradient range: the supremum is +inf.
    """
    x = _as_vector(x, lmgf_evaluator.dimension)
    d = x.shape[0]
    lam = np.zeros(d)

    def objective(l: np.ndarray) -> float:
        val = lmgf_evaluator.value(l)
        if not np.isfinite(val):
            raise NumericFailure(l)
        return float(x @ l - val)

    obj = objective(lam)
    for _ in range(max_iter):
        g = x - lmgf_evaluator.grad(lam)
        gnorm = np.linalg.norm(g)
        if gnorm <= GRADIENT_TOL:
            break
        step = None
        if lmgf_evaluator.hess is not None:
            H = lmgf_evaluator.hess(lam)
            scale = np.trace(H) / d
            if scale > 0 and np.isfinite(scale):
                try:
                    step = np.linalg.solve(H + (1e-12 * scale) * np.eye(d), g)
                except np.linalg.LinAlgError:
                    step = None
        if step is None or step @ g <= 0 or not np.all(np.isfinite(step)):
            step = g
        # Armijo backtracking; the required increase shrinks with the step
        t = 1.0
        slope = float(g @ step)
        new_obj = None
        while t > 1e-18:
            cand = lam + t * step
            cand_obj = objective(cand)
            if cand_obj >= obj + 1e-4 * t * slope:
                new_obj = cand_obj
                lam = cand
                break
            t *= 0.5
        if new_obj is None:
            break  # no acceptable step: the objective has stalled
        if np.linalg.norm(lam) > DIVERGENCE_NORM:
            return math.inf
        if abs(new_obj - obj) <= OBJECTIVE_TOL:
            obj = new_obj
            break
        obj = new_obj
    return float(obj)


def sample(model: ObservationModel, rng: np.random.Generator) -> np.ndarray:
    """One draw from the model. Gaussian uses the PSD factorization of cov."""
    if isinstance(model, GaussianModel):
        eps = rng.standard_normal(model.dimension)
        return model.mean + model.sampling_factor @ eps
    u = rng.random()
    idx = int(np.searchsorted(model._cdf, u, side="right"))
    idx = min(idx, model.atoms.shape[0] - 1)
    return model.atoms[idx].copy()


def model_to_dict(model: ObservationModel) -> dict:
    if isinstance(model, GaussianModel):
        return {"kind": "gaussian", "mean": model.mean.tolist(), "cov": model.cov.tolist()}
    return {"kind": "discrete", "atoms": model.atoms.tolist(), "pmf": model.pmf.tolist()}


def model_from_dict(cfg: dict) -> ObservationModel:
    kind = cfg.get("kind")
    if kind == "gaussian":
        mean = np.atleast_1d(np.asarray(cfg["mean"], dtype=float))
        cov = cfg["cov"]
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:  # scalar variance shorthand for d = 1
            cov = cov.reshape(1, 1)
        return GaussianModel(mean=mean, cov=cov)
    if kind == "discrete":
        atoms = np.asarray(cfg["atoms"], dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        return DiscreteModel(atoms=atoms, pmf=np.asarray(cfg["pmf"], dtype=float))
    raise ValueError(f"unknown model kind: {kind!r}")
