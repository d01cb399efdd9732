"""Network topologies, link-failure weight processes, and spectral utilities.

The potential-communication graph is directed but generated bidirectionally
(geometric graphs); individual directed links may then fail independently.
Every emitted weight matrix is row-stochastic with zero pattern inside the
potential edge set plus the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "Topology",
    "GraphGenerationError",
    "NotPrimitiveError",
    "ConstantWeights",
    "IidLinkFailures",
    "MarkovLinkFailures",
    "WeightProcess",
    "check_stochastic",
    "random_geometric_graph",
    "laplacian_weight_matrix",
    "next_weight_matrix",
    "left_perron_vector",
    "subdominant_modulus",
    "save_topology",
    "load_topology",
]

ROW_SUM_TOL = 1e-12
ENTRY_CLAMP = -1e-14
PERRON_TOL = 1e-10
SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITER = 100_000
PRIMITIVITY_MARGIN = 1e-9

_POWER_SEED = 0x9E3779B97F4A7C15  # fixed stream for power-iteration starts


class GraphGenerationError(RuntimeError):
    """Could not generate a connected graph within the retry budget."""


class NotPrimitiveError(RuntimeError):
    """The matrix has |lambda_2| too close to 1 (no unique aperiodic initial class)."""


@dataclass(frozen=True, eq=False)
class Topology:
    """Directed potential-edge set over n nodes. Edge (j, i) means i can hear j."""

    n: int
    edges: Tuple[Tuple[int, int], ...]
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("node count must be >= 1")
        canon = tuple(sorted((int(j), int(i)) for j, i in self.edges))
        for j, i in canon:
            if j == i:
                raise ValueError(f"self-loop ({j}, {i}) not allowed in the edge set")
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise ValueError(f"edge ({j}, {i}) out of range for n={self.n}")
        if len(set(canon)) != len(canon):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", canon)
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float)
            if pos.shape != (self.n, 2):
                raise ValueError("positions must have shape (n, 2)")
            object.__setattr__(self, "positions", pos)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def senders(self) -> np.ndarray:
        return np.array([j for j, _ in self.edges], dtype=np.intp)

    @cached_property
    def receivers(self) -> np.ndarray:
        return np.array([i for _, i in self.edges], dtype=np.intp)

    @cached_property
    def in_degree(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.intp)
        np.add.at(deg, self.receivers, 1)
        return deg

    @property
    def max_in_degree(self) -> int:
        return int(self.in_degree.max(initial=0))

    @cached_property
    def adjacency_mask(self) -> np.ndarray:
        """Boolean (n, n) mask of allowed weight entries: diagonal plus (recv, send)."""
        mask = np.eye(self.n, dtype=bool)
        mask[self.receivers, self.senders] = True
        return mask

    def default_alpha(self) -> float:
        return 1.0 / (self.max_in_degree + 1)

    def is_connected_undirected(self) -> bool:
        if self.n == 1:
            return True
        neighbors = [[] for _ in range(self.n)]
        for j, i in self.edges:
            neighbors[j].append(i)
            neighbors[i].append(j)
        seen = np.zeros(self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in neighbors[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        return bool(seen.all())


def check_stochastic(W, topology: Optional[Topology] = None, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Validate and return a row-stochastic matrix (tiny negatives clamped to 0)."""
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    if W.min() < ENTRY_CLAMP:
        raise ValueError(f"negative entry {W.min()} below clamp tolerance")
    W[W < 0] = 0.0
    rows = W.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > tol:
        raise ValueError(f"row sums deviate from 1 by {np.max(np.abs(rows - 1.0))}")
    if topology is not None:
        if W.shape[0] != topology.n:
            raise ValueError("matrix size does not match topology")
        off = W[~topology.adjacency_mask]
        if off.size and np.any(off != 0.0):
            raise ValueError("nonzero entries outside the declared topology")
    return W


def random_geometric_graph(
    n: int, r: float, rng: np.random.Generator, max_attempts: int = 1000
) -> Topology:
    """Nodes uniform on the unit square, bidirectional links within distance r.

    Redraws positions until the undirected graph is connected.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if r <= 0:
        raise ValueError("radius must be positive")
    for _ in range(max_attempts):
        pos = rng.random((n, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        close = dist <= r
        np.fill_diagonal(close, False)
        edges = [(int(j), int(i)) for j in range(n) for i in range(n) if close[j, i]]
        top = Topology(n=n, edges=tuple(edges), positions=pos)
        if top.is_connected_undirected():
            return top
    raise GraphGenerationError(
        f"no connected geometric graph with n={n}, r={r} in {max_attempts} attempts"
    )


def laplacian_weight_matrix(topology: Topology, active, alpha: float) -> np.ndarray:
    """W = I - alpha * L for the in-degree Laplacian of the active edge subset.

    `active` is a boolean mask over topology.edges or an iterable of (j, i)
    pairs. Requires 0 < alpha <= 1/(d_max + 1) with d_max the max in-degree of
    the full edge set, which guarantees row stochasticity.
    """
    alpha_max = topology.default_alpha()
    if not (0.0 < alpha <= alpha_max + 1e-15):
        raise ValueError(f"alpha must be in (0, {alpha_max}], got {alpha}")
    if isinstance(active, np.ndarray) and active.dtype == bool:
        mask = active
        if mask.shape != (topology.n_edges,):
            raise ValueError("active mask length does not match the edge count")
    else:
        pairs = set((int(j), int(i)) for j, i in active)
        if not pairs.issubset(set(topology.edges)):
            raise ValueError("active edges must be a subset of the topology")
        mask = np.array([e in pairs for e in topology.edges], dtype=bool)
    n = topology.n
    W = np.zeros((n, n))
    send = topology.senders[mask]
    recv = topology.receivers[mask]
    W[recv, send] = alpha
    active_in = np.zeros(n)
    np.add.at(active_in, recv, 1.0)
    W[np.arange(n), np.arange(n)] = 1.0 - alpha * active_in
    return W


@dataclass(frozen=True, eq=False)
class ConstantWeights:
    """W_t identically equal to a fixed stochastic matrix."""

    A: np.ndarray
    topology: Optional[Topology] = None

    def __post_init__(self):
        object.__setattr__(self, "A", check_stochastic(self.A, self.topology))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def next_matrix(self, rng: np.random.Generator) -> np.ndarray:
        return self.A

    def clone(self) -> "ConstantWeights":
        return self


def _check_prob(name: str, value: float) -> float:
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


@dataclass(eq=False)
class IidLinkFailures:
    """Each directed link is active independently with probability p each step."""

    topology: Topology
    p: float
    alpha: Optional[float] = None

    def __post_init__(self):
        self.p = _check_prob("p", self.p)
        if self.alpha is None:
            self.alpha = self.topology.default_alpha()

    @property
    def n(self) -> int:
        return self.topology.n

    def next_matrix(self, rng: np.random.Generator) -> np.ndarray:
        active = rng.random(self.topology.n_edges) < self.p
        return laplacian_weight_matrix(self.topology, active, self.alpha)

    def clone(self) -> "IidLinkFailures":
        return IidLinkFailures(self.topology, self.p, self.alpha)


@dataclass(eq=False)
class MarkovLinkFailures:
    """Per-link two-state chains: online stays online w.p. q1, offline stays offline w.p. q2.

    All links start online. The state vector mutates in place on each step, so
    parallel runs must each own a clone.
    """

    topology: Topology
    q1: float
    q2: float
    alpha: Optional[float] = None
    state: Optional[np.ndarray] = None

    def __post_init__(self):
        self.q1 = _check_prob("q1", self.q1)
        self.q2 = _check_prob("q2", self.q2)
        if self.alpha is None:
            self.alpha = self.topology.default_alpha()
        if self.state is None:
            self.state = np.ones(self.topology.n_edges, dtype=bool)
        else:
            self.state = np.asarray(self.state, dtype=bool).copy()
            if self.state.shape != (self.topology.n_edges,):
                raise ValueError("state length does not match the edge count")

    @property
    def n(self) -> int:
        return self.topology.n

    def stationary_on_fraction(self) -> float:
        denom = (1.0 - self.q1) + (1.0 - self.q2)
        if denom == 0.0:  # frozen chain: stays in the initial (online) state
            return 1.0
        return (1.0 - self.q2) / denom

    def next_matrix(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.topology.n_edges)
        self.state = np.where(self.state, u < self.q1, u >= self.q2)
        return laplacian_weight_matrix(self.topology, self.state, self.alpha)

    def clone(self) -> "MarkovLinkFailures":
        return MarkovLinkFailures(self.topology, self.q1, self.q2, self.alpha)


WeightProcess = Union[ConstantWeights, IidLinkFailures, MarkovLinkFailures]


def next_weight_matrix(process: WeightProcess, rng: np.random.Generator) -> np.ndarray:
    return process.next_matrix(rng)


def _power_rng() -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([_POWER_SEED, 0], dtype=np.uint64)))


def _dominant_left_vector(A: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Left fixed point a^T A = a^T via damped power iteration, numpy eig fallback."""
    n = A.shape[0]
    v = np.full(n, 1.0 / n)
    At = A.T
    for _ in range(max_iter):
        w = 0.5 * (At @ v + v)  # damping kills periodic oscillation
        s = w.sum()
        if s <= 0:
            break
        w /= s
        res = np.max(np.abs(At @ w - w))
        v = w
        if res <= 0.5 * tol:
            return v
    # slow spectral gap: fall back to a direct eigensolve
    vals, vecs = np.linalg.eig(At)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    cand = np.real(vecs[:, idx])
    s = cand.sum()
    if abs(s) < 1e-300:
        raise NotPrimitiveError("left eigenvector for eigenvalue 1 is not sign-definite")
    cand = cand / s
    cand[np.abs(cand) < 1e-14] = 0.0
    return cand


def _spectral_radius(B: np.ndarray, tol: float, max_iter: int) -> Tuple[float, bool]:
    """Spectral radius by power iteration; (estimate, approximate_flag).

    A dominant complex pair never aligns, in which case the two-step ratio
    ||B^2 v||^(1/2) for unit v is returned with the flag set.
    """
    n = B.shape[0]
    rng = _power_rng()
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    res_checkpoint = np.inf
    for k in range(max_iter):
        w = B @ v
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            return 0.0, False
        mu = float(v @ w)
        res = np.linalg.norm(w - mu * v)
        v = w / nw
        if res <= tol * max(1.0, abs(mu)):
            return abs(mu), False
        if k % 500 == 499:
            if res > 0.5 * res_checkpoint:
                break  # oscillating: complex dominant pair
            res_checkpoint = res
    w2 = B @ (B @ v)
    return float(np.sqrt(np.linalg.norm(w2))), True


def subdominant_modulus(
    A, tol: float = SPECTRAL_TOL, max_iter: int = SPECTRAL_MAX_ITER, with_flag: bool = False
):
    """|lambda_2(A)| as the spectral radius of A - 1 a^T (a the left Perron vector)."""
    A = check_stochastic(A)
    a = _dominant_left_vector(A, PERRON_TOL, max_iter)
    B = A - np.outer(np.ones(A.shape[0]), a)
    value, approx = _spectral_radius(B, tol, max_iter)
    if with_flag:
        return value, approx
    return value


def left_perron_vector(A, tol: float = PERRON_TOL, max_iter: int = SPECTRAL_MAX_ITER) -> np.ndarray:
    """Probability vector a with a^T A = a^T, residual <= tol in sup norm.

    Raises NotPrimitiveError when |lambda_2(A)| >= 1 - 1e-9, i.e. when the
    fixed point is not unique or the chain is periodic.
    """
    A = check_stochastic(A)
    a = _dominant_left_vector(A, tol, max_iter)
    if a.min() < -1e-12:
        raise NotPrimitiveError("left fixed point has negative entries")
    a = np.clip(a, 0.0, None)
    a /= a.sum()
    gap, _ = _spectral_radius(A - np.outer(np.ones(A.shape[0]), a), SPECTRAL_TOL, max_iter)
    if gap >= 1.0 - PRIMITIVITY_MARGIN:
        raise NotPrimitiveError(f"|lambda_2| = {gap} is too close to 1")
    res = np.max(np.abs(A.T @ a - a))
    if res > tol:
        raise NotPrimitiveError(f"left Perron iteration stalled at residual {res}")
    return a


def save_topology(topology: Topology, path) -> None:
    """Edge-list text format: header `n=<count>`, then one `j i` pair per line."""
    lines = [f"n={topology.n}"]
    lines.extend(f"{j} {i}" for j, i in topology.edges)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_topology(path) -> Topology:
    with open(path) as fh:
        raw = [line.strip() for line in fh if line.strip()]
    if not raw or not raw[0].startswith("n="):
        raise ValueError(f"{path}: expected header 'n=<count>'")
    n = int(raw[0][2:])
    edges = []
    for line in raw[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: malformed edge line {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return Topology(n=n, edges=tuple(edges))
