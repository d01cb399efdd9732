"""Network design: pick the left Perron vector, then realize a weight matrix.

Two stages. First, minimize lambda_max(sum_j a_j^2 S_j) over the probability
simplex (projected subgradient with a deterministic local-refinement polish);
the best achievable decay rate over a radius-zeta ball is zeta^2/(2 lambda*).
Second, synthesize a stochastic matrix with the chosen left eigenvector on the
given topology by minimizing the spectral norm of A - 1 a^T (subgradient steps
with Dykstra projections onto the constraint sets).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .network import Topology, check_stochastic

__all__ = [
    "DesignProblem",
    "DesignResult",
    "InfeasibleDesignError",
    "project_simplex",
    "optimize_left_eigenvector",
    "design_rate",
    "metropolis_matrix",
    "synthesize_weight_matrix",
    "solve_design",
]

_POWER_SEED = 0x2545F4914F6CDD1D
STALL_WINDOW = 200
MAX_SUBGRADIENT_ITERS = 100_000


class InfeasibleDesignError(RuntimeError):
    """Dykstra projections stalled: no feasible matrix within tolerance."""

    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"constraint projection stalled at residual {residual:.3e}")


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.shape[0] + 1)
    cond = u - (css - 1.0) / ks > 0
    rho = int(np.nonzero(cond)[0][-1])
    theta = (css[rho] - 1.0) / (rho + 1)
    return np.clip(v - theta, 0.0, None)


def _as_covariances(covariances) -> np.ndarray:
    S = np.asarray(covariances, dtype=float)
    if S.ndim == 1:  # scalar variances, d = 1
        S = S[:, None, None]
    if S.ndim != 3 or S.shape[1] != S.shape[2]:
        raise ValueError(f"expected (N, d, d) covariances, got shape {S.shape}")
    for j in range(S.shape[0]):
        if not np.allclose(S[j], S[j].T, atol=1e-12, rtol=0.0):
            raise ValueError(f"covariance {j} is not symmetric")
        if np.linalg.eigvalsh(S[j]).min() < -1e-12:
            raise ValueError(f"covariance {j} is not PSD")
    return 0.5 * (S + np.swapaxes(S, 1, 2))


@dataclass(eq=False)
class DesignProblem:
    """Per-node covariances, the communication topology, and the accuracy radius."""

    covariances: np.ndarray  # (N, d, d)
    topology: Topology
    zeta: float

    def __post_init__(self):
        self.covariances = _as_covariances(self.covariances)
        if self.covariances.shape[0] != self.topology.n:
            raise ValueError("number of covariances does not match the topology size")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")

    @property
    def n(self) -> int:
        return self.covariances.shape[0]

    @property
    def dimension(self) -> int:
        return self.covariances.shape[1]


@dataclass(eq=False)
class DesignResult:
    a_star: np.ndarray
    lambda_star: float
    rate_star: float
    A: np.ndarray
    gamma: float

    def __post_init__(self):
        a = np.asarray(self.a_star, dtype=float)
        if abs(a.sum() - 1.0) > 1e-8 or a.min() < -1e-12:
            raise ValueError("a_star must lie on the simplex")
        res = np.max(np.abs(a @ self.A - a))
        rows = np.max(np.abs(self.A.sum(axis=1) - 1.0))
        if res > 1e-8 or rows > 1e-8:
            raise ValueError(
                f"A violates eigenvector/row constraints: residuals {res:.2e}, {rows:.2e}"
            )


def design_rate(lambda_star: float, zeta: float) -> float:
    """Best decay rate over the complement of the radius-zeta ball: zeta^2/(2 lambda*)."""
    if lambda_star <= 0:
        raise ValueError("lambda_star must be positive")
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    return zeta**2 / (2.0 * lambda_star)


def _top_eigpair(S: np.ndarray) -> Tuple[float, np.ndarray]:
    if S.shape[0] == 1:
        return float(S[0, 0]), np.ones(1)
    w, V = np.linalg.eigh(S)
    return float(w[-1]), V[:, -1]


def _combined(S: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.tensordot(a**2, S, axes=(0, 0))


def _batch_lambda_max(S: np.ndarray, A2: np.ndarray) -> np.ndarray:
    """lambda_max of sum_j A2[k, j] S_j for each candidate row k."""
    combined = np.tensordot(A2, S, axes=(1, 0))  # (K, d, d)
    if S.shape[1] == 1:
        return combined[:, 0, 0]
    return np.linalg.eigvalsh(combined)[:, -1]


def _zero_sum_lattice(n: int, m: int) -> np.ndarray:
    """Integer offsets with coordinates in [-m, m] summing to zero, as floats."""
    free = np.array(list(product(range(-m, m + 1), repeat=n - 1)), dtype=float)
    last = -free.sum(axis=1, keepdims=True)
    return np.hstack([free, last])


def _batch_project_simplex(V: np.ndarray) -> np.ndarray:
    U = np.sort(V, axis=1)[:, ::-1]
    css = np.cumsum(U, axis=1)
    ks = np.arange(1, V.shape[1] + 1)
    cond = U - (css - 1.0) / ks > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = (css[np.arange(V.shape[0]), rho] - 1.0) / (rho + 1)
    return np.clip(V - theta[:, None], 0.0, None)


def _local_refine(S: np.ndarray, a: np.ndarray, value: float, rounds: int = 10) -> Tuple[np.ndarray, float]:
    """Nested zero-sum lattice search around `a`; deterministic value polish."""
    n = S.shape[0]
    m = 4 if n <= 4 else 2
    lattice = _zero_sum_lattice(n, m)
    radius = 0.1
    best_a, best_val = a, value
    for _ in range(rounds):
        cand = best_a[None, :] + (radius / m) * lattice
        bad = cand.min(axis=1) < 0
        if bad.any():
            cand[bad] = _batch_project_simplex(cand[bad])
        vals = _batch_lambda_max(S, cand**2)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            best_a = cand[k]
        radius /= 2.0
    return best_a, best_val


def optimize_left_eigenvector(
    problem: DesignProblem, tol: float = 1e-12, max_iter: int = MAX_SUBGRADIENT_ITERS
) -> Tuple[np.ndarray, float]:
    """Minimize lambda_max(sum_j a_j^2 S_j) over the simplex.

    Projected subgradient from the uniform vector with c/sqrt(k) steps and
    best-iterate tracking; stops once the best value has not improved by tol
    over STALL_WINDOW iterations. A deterministic lattice refinement around
    the best iterate then polishes the value (problems up to N = 6).
    """
    S = problem.covariances if isinstance(problem, DesignProblem) else _as_covariances(problem)
    n = S.shape[0]
    if n == 1:
        return np.ones(1), _top_eigpair(S[0])[0]
    a = np.full(n, 1.0 / n)
    val, v = _top_eigpair(_combined(S, a))
    c = val if val > 0 else 1.0
    best_a, best_val = a.copy(), val
    mark = best_val
    stall = 0
    for k in range(1, max_iter + 1):
        quad = np.einsum("i,jik,k->j", v, S, v)  # v^T S_j v per node
        g = 2.0 * a * quad
        a = project_simplex(a - (c / math.sqrt(k)) * g)
        val, v = _top_eigpair(_combined(S, a))
        if val < best_val:
            best_val, best_a = val, a.copy()
        if mark - best_val > tol:
            mark = best_val
            stall = 0
        else:
            stall += 1
            if stall >= STALL_WINDOW:
                break
    if n <= 6:
        best_a, best_val = _local_refine(S, best_a, best_val)
    return best_a, float(best_val)


def metropolis_matrix(topology: Topology, a) -> np.ndarray:
    """Reversible stochastic matrix with left fixed vector a (Metropolis-style seed).

    Uses uniform proposals over bidirectional neighbors and the usual
    acceptance ratio, so a^T P = a^T holds by detailed balance. Weights on
    one-directional links stay zero.
    """
    n = topology.n
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (n,):
        raise ValueError("a must have one entry per node")
    pairs = set(topology.edges)
    sym = [[] for _ in range(n)]
    for j, i in topology.edges:
        if (i, j) in pairs:
            sym[i].append(j)
    deg = np.array([len(s) for s in sym], dtype=float)
    P = np.zeros((n, n))
    for i in range(n):
        if deg[i] == 0:
            P[i, i] = 1.0
            continue
        for j in sym[i]:
            if a[i] > 0:
                P[i, j] = min(1.0 / deg[i], a[j] / (a[i] * deg[j]))
            else:
                P[i, j] = 1.0 / deg[i] if a[j] > 0 else 1.0 / deg[i]
        P[i, i] = 1.0 - P[i].sum()
    return P


def _hashed_start(M: np.ndarray, salt: int) -> np.ndarray:
    """Unit start vector derived from the matrix bytes; input-dependent so that
    iterative callers cannot steer the matrix into a fixed start's nullspace."""
    import hashlib

    digest = hashlib.blake2b(M.tobytes() + salt.to_bytes(2, "little"), digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    v = rng.standard_normal(M.shape[1])
    return v / np.linalg.norm(v)


def _power_singular(M: np.ndarray, v: np.ndarray, tol: float, max_iter: int):
    """Largest singular value estimate; stops when the Rayleigh value stalls."""
    sig2 = -1.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            return 0.0, v
        sig2_new = float(v @ w)
        stalled = abs(sig2_new - sig2) <= tol * max(abs(sig2_new), 1e-30)
        v = w / nw
        sig2 = sig2_new
        if stalled:
            break
    return math.sqrt(max(sig2, 0.0)), v


def _top_singular(
    M: np.ndarray,
    v0: Optional[np.ndarray] = None,
    tol: float = 1e-11,
    max_iter: int = 400,
    verify: bool = False,
):
    """Top singular triple of M by power iteration on M^T M.

    `v0` warm-starts the iteration; `verify` reruns from a salted second start
    and keeps the larger estimate.
    """
    start = v0 / np.linalg.norm(v0) if v0 is not None else _hashed_start(M, 0)
    sigma, v = _power_singular(M, start, tol, max_iter)
    if verify:
        sigma2, v2 = _power_singular(M, _hashed_start(M, 1), tol, max_iter)
        if sigma2 > sigma:
            sigma, v = sigma2, v2
    Mv = M @ v
    nmv = np.linalg.norm(Mv)
    u = Mv / nmv if nmv > 0 else np.zeros(M.shape[0])
    return sigma, u, v


def _spectral_norm_exact(M: np.ndarray) -> float:
    """Verified spectral norm: dense symmetric eigensolve of M^T M for small n,
    long two-start power iteration otherwise."""
    if M.shape[0] <= 128:
        w = np.linalg.eigvalsh(M.T @ M)
        return math.sqrt(max(float(w[-1]), 0.0))
    return _top_singular(M, tol=1e-13, max_iter=20_000, verify=True)[0]


def _constraint_residual(A: np.ndarray, a: np.ndarray, mask: np.ndarray) -> float:
    rows = np.max(np.abs(A.sum(axis=1) - 1.0))
    cols = np.max(np.abs(a @ A - a))
    box = max(0.0, -A.min(), A.max() - 1.0)
    off = np.max(np.abs(A[~mask])) if (~mask).any() else 0.0
    return max(rows, cols, box, off)


def _dykstra(X: np.ndarray, a: np.ndarray, mask: np.ndarray, tol: float, max_cycles: int = 20_000) -> np.ndarray:
    """Project X onto {A1=1} ∩ {a^T A = a^T} ∩ {0<=A<=1, off-pattern zero}."""
    n = X.shape[0]
    aa = float(a @ a)
    x = X.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    r = np.zeros_like(x)
    prev = math.inf
    for cycle in range(max_cycles):
        z = x + p
        y = z - np.outer((z.sum(axis=1) - 1.0) / n, np.ones(n))
        p = z - y
        x = y
        z = x + q
        y = z - np.outer(a, (a @ z - a) / aa)
        q = z - y
        x = y
        z = x + r
        y = np.clip(z, 0.0, 1.0)
        y[~mask] = 0.0
        r = z - y
        x = y
        if cycle % 5 == 4:
            res = _constraint_residual(x, a, mask)
            if res <= tol:
                return x
            if cycle % 500 == 499:
                if res > 0.999 * prev and res > 1e-6:
                    raise InfeasibleDesignError(res)
                prev = res
    if _constraint_residual(x, a, mask) > max(tol, 1e-6):
        raise InfeasibleDesignError(_constraint_residual(x, a, mask))
    return x


def synthesize_weight_matrix(
    topology: Topology,
    a,
    tol: float = 1e-8,
    iterations: int = 400,
) -> Tuple[np.ndarray, float]:
    """Stochastic A on the topology with a^T A = a^T, minimizing ||A - 1 a^T||.

    Starts from the Metropolis-style feasible seed (and its lazy variant),
    then runs projected subgradient steps on the spectral norm with Dykstra
    projections back onto the constraints. Returns the best feasible iterate
    and its gamma. A gamma >= 1 leaves Theorem-style convergence uncertified
    and triggers a warning.
    """
    n = topology.n
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if abs(a.sum() - 1.0) > 1e-9 or a.min() < -1e-12:
        raise ValueError("a must lie on the probability simplex")
    a = np.clip(a, 0.0, None)
    a = a / a.sum()
    mask = topology.adjacency_mask
    ones = np.ones(n)

    P = metropolis_matrix(topology, a)
    seeds = [P, 0.5 * (np.eye(n) + P)]
    try:
        # the rank-one target projected onto the constraints; exact optimum on
        # dense topologies, a useful third start elsewhere
        seeds.append(_dykstra(np.outer(ones, a), a, mask, tol=1e-10))
    except InfeasibleDesignError:
        pass
    best_A, best_gamma = None, math.inf
    for Sd in seeds:
        g = _spectral_norm_exact(Sd - np.outer(ones, a))
        if g < best_gamma:
            best_A, best_gamma = Sd.copy(), g
    seed_A, seed_gamma = best_A.copy(), best_gamma

    A = best_A.copy()
    c = max(best_gamma, 0.1)
    v_warm = None
    for k in range(1, iterations + 1):
        M = A - np.outer(ones, a)
        sigma, u, v = _top_singular(M, v0=v_warm)
        v_warm = v
        if sigma < best_gamma:
            checked = _spectral_norm_exact(M)
            if checked < best_gamma:
                best_gamma, best_A = checked, A.copy()
        A = _dykstra(A - (c / math.sqrt(k)) * np.outer(u, v), a, mask, tol=1e-7)

    def _finalize(cand: np.ndarray):
        X = _dykstra(cand, a, mask, tol=min(tol * 1e-2, 1e-10))
        X = np.clip(X, 0.0, None)
        X[~mask] = 0.0
        X /= X.sum(axis=1, keepdims=True)  # exact row sums; column residual stays < tol
        g = _spectral_norm_exact(X - np.outer(ones, a))
        return X, float(g)

    out, gamma = _finalize(best_A)
    if gamma > seed_gamma:  # never return worse than the feasible seed
        out, gamma = _finalize(seed_A)
    if gamma >= 1.0:
        warnings.warn(
            f"synthesized matrix has ||A - 1 a^T|| = {gamma:.4f} >= 1; "
            "geometric convergence of A^r is not certified",
            RuntimeWarning,
        )
    return out, float(gamma)


def solve_design(problem: DesignProblem, tol: float = 1e-12) -> DesignResult:
    """Full pipeline: optimal a, its rate over the accuracy ball, and a realized A."""
    a_star, lambda_star = optimize_left_eigenvector(problem, tol=tol)
    rate = design_rate(lambda_star, problem.zeta)
    A, gamma = synthesize_weight_matrix(problem.topology, a_star)
    return DesignResult(a_star=a_star, lambda_star=lambda_star, rate_star=rate, A=A, gamma=gamma)
