"""Consensus+innovations state recursion and Monte Carlo error-probability estimation.

Each node averages neighbors' states through a (possibly random) stochastic
weight matrix while folding fresh observations in with weight 1/t. The Monte
Carlo driver counts, per node and iteration, how often the state falls outside
an accuracy ball, using counter-based per-run random streams so that results
are bit-identical regardless of the worker-thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .network import (
    ConstantWeights,
    IidLinkFailures,
    MarkovLinkFailures,
    WeightProcess,
)
from .observation_models import DiscreteModel, GaussianModel, ObservationModel

__all__ = [
    "AccuracyRegion",
    "SimulationConfig",
    "ErrorProbabilityTable",
    "SlopeEstimate",
    "InsufficientDataError",
    "step",
    "run_via_phi_products",
    "simulate_trajectory",
    "monte_carlo_error_probs",
    "estimate_decay_rate",
    "estimate_time_to_accuracy",
    "derive_rng",
]

BLOCK_SIZE = 256  # fixed Monte Carlo batching unit; never depends on thread count
_MASK64 = (1 << 64) - 1
_ROLE_OBS = 0
_ROLE_LINKS = 1
TOPOLOGY_STREAM = (1 << 63) - 1  # reserved stream id, above any (run, role) pair


class InsufficientDataError(RuntimeError):
    """Too few uncensored points to fit a decay slope."""


def derive_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for an independent stream of a seeded experiment."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_stream(seed: int, run: int, role: int) -> np.random.Generator:
    return derive_rng(seed, (run << 1) | role)


@dataclass(frozen=True, eq=False)
class AccuracyRegion:
    """Euclidean ball around `center` of radius `radius`; the deviation set is its complement."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", c)

    @property
    def dimension(self) -> int:
        return self.center.shape[0]


@dataclass(eq=False)
class SimulationConfig:
    models: List[ObservationModel]
    process: WeightProcess
    horizon: int
    runs: int
    region: AccuracyRegion
    seed: int

    def __post_init__(self):
        if len(self.models) < 1:
            raise ValueError("need at least one observation model")
        dims = {m.dimension for m in self.models}
        if len(dims) != 1:
            raise ValueError(f"model dimensions differ: {sorted(dims)}")
        if self.region.dimension != dims.pop():
            raise ValueError("region dimension does not match the models")
        if self.process.n != len(self.models):
            raise ValueError("weight process size does not match the number of models")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")

    @property
    def n_nodes(self) -> int:
        return len(self.models)

    @property
    def dimension(self) -> int:
        return self.models[0].dimension


@dataclass(eq=False)
class ErrorProbabilityTable:
    """Per-node, per-iteration empirical exceedance probabilities over K runs."""

    counts: np.ndarray  # (N, T) int64
    K: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def p_hat(self) -> np.ndarray:
        return self.counts / self.K

    @property
    def censored(self) -> np.ndarray:
        return self.counts == 0

    @property
    def n_nodes(self) -> int:
        return self.counts.shape[0]

    @property
    def horizon(self) -> int:
        return self.counts.shape[1]

    def to_csv(self, path) -> None:
        lines = ["node,t,count,p_hat,censored"]
        p = self.p_hat
        cens = self.censored
        for i in range(self.n_nodes):
            for t in range(self.horizon):
                lines.append(
                    f"{i},{t + 1},{self.counts[i, t]},{float(p[i, t])!r},{int(cens[i, t])}"
                )
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, K: Optional[int] = None) -> "ErrorProbabilityTable":
        rows = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "node,t,count,p_hat,censored":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                if line.strip():
                    rows.append(line.strip().split(","))
        nodes = max(int(r[0]) for r in rows) + 1
        horizon = max(int(r[1]) for r in rows)
        counts = np.zeros((nodes, horizon), dtype=np.int64)
        inferred_K = K
        for r in rows:
            i, t, c, p = int(r[0]), int(r[1]), int(r[2]), float(r[3])
            counts[i, t - 1] = c
            if inferred_K is None and c > 0:
                inferred_K = round(c / p)
        if inferred_K is None:
            raise ValueError("cannot infer run count from an all-censored table")
        return cls(counts=counts, K=inferred_K)


def step(states, W, Z, t: int) -> np.ndarray:
    """One consensus+innovations update: X_t = W ((t-1)/t X_{t-1} + (1/t) Z_t)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    W = np.asarray(W, dtype=float)
    if t < 1:
        raise ValueError("t must be >= 1")
    if states.shape != Z.shape or W.shape != (states.shape[0], states.shape[0]):
        raise ValueError(
            f"shape mismatch: states {states.shape}, Z {Z.shape}, W {W.shape}"
        )
    return W @ (((t - 1) / t) * states + Z / t)


def run_via_phi_products(W_sequence, Z_sequence, i: int, t: int) -> np.ndarray:
    """State of node i at time t from the backward matrix products (test oracle).

    Evaluates (1/t) sum_s [W_t ... W_s Z_s]_i directly instead of iterating
    the recursion.
    """
    if t < 1 or len(W_sequence) < t or len(Z_sequence) < t:
        raise ValueError("need weight and observation sequences of length >= t")
    n = np.asarray(W_sequence[0]).shape[0]
    row = np.zeros(n)
    row[i] = 1.0
    acc = np.zeros(np.atleast_2d(Z_sequence[0]).shape[1])
    for s in range(t, 0, -1):
        row = row @ np.asarray(W_sequence[s - 1], dtype=float)
        acc = acc + row @ np.atleast_2d(np.asarray(Z_sequence[s - 1], dtype=float))
    return acc / t


def _model_partition(models: Sequence[ObservationModel]):
    gauss = [(j, m) for j, m in enumerate(models) if isinstance(m, GaussianModel)]
    disc = [(j, m) for j, m in enumerate(models) if isinstance(m, DiscreteModel)]
    return gauss, disc


def _draw_observations(
    models: Sequence[ObservationModel], T: int, rng: np.random.Generator
) -> np.ndarray:
    """(T, N, d) observation draws; Gaussian nodes consume the stream first."""
    N = len(models)
    d = models[0].dimension
    gauss, disc = _model_partition(models)
    Z = np.empty((T, N, d))
    if gauss:
        eps = rng.standard_normal((T, len(gauss), d))
        for k, (j, m) in enumerate(gauss):
            Z[:, j, :] = m.mean + eps[:, k, :] @ m.sampling_factor.T
    if disc:
        u = rng.random((T, len(disc)))
        for k, (j, m) in enumerate(disc):
            idx = np.searchsorted(m._cdf, u[:, k], side="right")
            np.clip(idx, 0, m.atoms.shape[0] - 1, out=idx)
            Z[:, j, :] = m.atoms[idx]
    return Z


def simulate_trajectory(config: SimulationConfig, run: int = 0) -> np.ndarray:
    """(T, N, d) states of one run, using the run's dedicated random streams."""
    T, N, d = config.horizon, config.n_nodes, config.dimension
    Z = _draw_observations(config.models, T, _run_stream(config.seed, run, _ROLE_OBS))
    rng_links = _run_stream(config.seed, run, _ROLE_LINKS)
    process = config.process.clone()
    X = np.zeros((N, d))
    out = np.empty((T, N, d))
    for t in range(1, T + 1):
        W = process.next_matrix(rng_links)
        X = step(X, W, Z[t - 1], t)
        out[t - 1] = X
    return out


def _link_activity(process: WeightProcess, U: np.ndarray) -> np.ndarray:
    """(B, T, E) activity booleans from per-run uniforms, matching next_matrix draws."""
    if isinstance(process, IidLinkFailures):
        return U < process.p
    assert isinstance(process, MarkovLinkFailures)
    B, T, E = U.shape
    act = np.empty((B, T, E), dtype=bool)
    state = np.ones((B, E), dtype=bool)
    for t in range(T):
        u = U[:, t, :]
        state = np.where(state, u < process.q1, u >= process.q2)
        act[:, t, :] = state
    return act


def _run_block(
    config: SimulationConfig, lo: int, hi: int, keep_final: bool = False
) -> np.ndarray:
    """Exceedance counts (N, T) contributed by runs [lo, hi).

    With `keep_final`, returns the (hi-lo, N, d) final states instead.
    """
    T, N, d = config.horizon, config.n_nodes, config.dimension
    B = hi - lo
    process = config.process
    center = config.region.center
    r2 = config.region.radius**2

    Z = np.empty((B, T, N, d))
    for b, run in enumerate(range(lo, hi)):
        Z[b] = _draw_observations(config.models, T, _run_stream(config.seed, run, _ROLE_OBS))

    constant = isinstance(process, ConstantWeights)
    if constant:
        A = process.A
    else:
        top = process.topology
        E = top.n_edges
        U = np.empty((B, T, E))
        for b, run in enumerate(range(lo, hi)):
            U[b] = _run_stream(config.seed, run, _ROLE_LINKS).random((T, E))
        act = _link_activity(process, U)
        del U
        alpha = process.alpha
        send, recv = top.senders, top.receivers
        diag = np.arange(N)
        recv_onehot = np.zeros((E, N))
        recv_onehot[np.arange(E), recv] = 1.0

    counts = np.zeros((N, T), dtype=np.int64)
    X = np.zeros((B, N, d))
    for t in range(1, T + 1):
        V = ((t - 1) / t) * X + Z[:, t - 1] / t
        if constant:
            X = np.matmul(A, V)
        else:
            a_t = act[:, t - 1, :].astype(float)
            Wb = np.zeros((B, N, N))
            Wb[:, recv, send] = alpha * a_t
            Wb[:, diag, diag] = 1.0 - alpha * (a_t @ recv_onehot)
            X = np.matmul(Wb, V)
        dev = X - center
        exceed = (dev * dev).sum(axis=2) >= r2
        counts[:, t - 1] += exceed.sum(axis=0)
    if keep_final:
        return X
    return counts


def monte_carlo_error_probs(config: SimulationConfig, threads: int = 1) -> ErrorProbabilityTable:
    """Empirical exceedance probabilities over config.runs independent trajectories.

    Runs are processed in fixed-size blocks whose integer counts merge
    associatively, so the table is identical for any thread count.
    """
    K = config.runs
    spans = [(lo, min(lo + BLOCK_SIZE, K)) for lo in range(0, K, BLOCK_SIZE)]
    counts = np.zeros((config.n_nodes, config.horizon), dtype=np.int64)
    if threads <= 1:
        for lo, hi in spans:
            counts += _run_block(config, lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(lambda s: _run_block(config, s[0], s[1]), spans):
                counts += part
    return ErrorProbabilityTable(counts=counts, K=K)


def sample_final_states(config: SimulationConfig, threads: int = 1) -> np.ndarray:
    """(runs, N, d) states at the horizon, one per Monte Carlo run."""
    K = config.runs
    spans = [(lo, min(lo + BLOCK_SIZE, K)) for lo in range(0, K, BLOCK_SIZE)]
    if threads <= 1:
        parts = [_run_block(config, lo, hi, keep_final=True) for lo, hi in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: _run_block(config, s[0], s[1], keep_final=True), spans))
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    stderr: float
    n_points: int
    window: Tuple[int, int]


def estimate_decay_rate(p_series, window: Tuple[int, int], min_points: int = 10) -> SlopeEstimate:
    """Exponential decay rate of a probability series: negated LS slope of log p vs t.

    `p_series[k]` is the probability at iteration t = k + 1; censored entries
    (p = 0) are excluded. Requires at least `min_points` uncensored points
    inside the window.
    """
    p = np.asarray(p_series, dtype=float)
    t_lo, t_hi = int(window[0]), int(window[1])
    if not (1 <= t_lo <= t_hi <= p.shape[0]):
        raise ValueError(f"window {window} outside horizon 1..{p.shape[0]}")
    ts = np.arange(t_lo, t_hi + 1, dtype=float)
    ps = p[t_lo - 1 : t_hi]
    mask = ps > 0
    n = int(mask.sum())
    if n < min_points:
        raise InsufficientDataError(
            f"{n} uncensored points in window {window}, need >= {min_points}"
        )
    x = ts[mask]
    y = np.log(ps[mask])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope_ls = float(xc @ (y - y.mean())) / sxx
    resid = y - (y.mean() + slope_ls * xc)
    sigma2 = float(resid @ resid) / max(n - 2, 1)
    return SlopeEstimate(
        slope=-slope_ls,
        stderr=math.sqrt(sigma2 / sxx),
        n_points=n,
        window=(t_lo, t_hi),
    )


def estimate_time_to_accuracy(rate: float, confidence: float) -> float:
    """Iterations needed to hit the accuracy region with the given confidence."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must lie in (0, 1)")
    return -math.log1p(-confidence) / rate
