"""Command-line interface: `simulate`, `design`, and `rates` subcommands.

Experiment specs and design problems are JSON files; outputs are CSV tables
and JSON summaries. Every command is deterministic given (spec, seed): random
streams are derived from the seed with counter-based generators and a
`--threads` flag never changes results.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from itertools import product
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import design as design_mod
from . import engine, network, rates
from .observation_models import (
    GaussianModel,
    NumericFailure,
    ObservationModel,
    conjugate_numeric,
    mean_of,
    model_from_dict,
    model_oracle,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INFEASIBLE = 4


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config error at '{key}': {message}")


def _load_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read file: {exc}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")


def _require(cfg: dict, key: str, kind, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required key")
    value = cfg[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}" if where else key, f"expected {kind.__name__}")
    return value


def _positive_int(cfg: dict, key: str, where: str = "") -> int:
    value = _require(cfg, key, int, where)
    if isinstance(value, bool) or value < 1:
        raise ConfigError(f"{where}.{key}" if where else key, f"must be a positive integer, got {value!r}")
    return value


def _build_topology(cfg: dict, seed: int, base: Path) -> network.Topology:
    mode = _require(cfg, "mode", str, "network")
    if mode == "generate":
        n = _positive_int(cfg, "n", "network")
        r = float(_require(cfg, "r", float, "network"))
        rng = engine.derive_rng(seed, engine.TOPOLOGY_STREAM)
        return network.random_geometric_graph(n, r, rng)
    if mode == "file":
        path = (base / _require(cfg, "path", str, "network")).resolve()
        try:
            return network.load_topology(path)
        except (OSError, ValueError) as exc:
            raise ConfigError("network.path", str(exc))
    raise ConfigError("network.mode", f"unknown mode {mode!r}")


def _build_models(cfg: dict, n: int) -> List[ObservationModel]:
    if "shared" in cfg:
        try:
            model = model_from_dict(cfg["shared"])
        except (KeyError, ValueError) as exc:
            raise ConfigError("models.shared", str(exc))
        return [model] * n
    if "per_node" in cfg:
        entries = cfg["per_node"]
        if len(entries) != n:
            raise ConfigError("models.per_node", f"expected {n} models, got {len(entries)}")
        out = []
        for k, entry in enumerate(entries):
            try:
                out.append(model_from_dict(entry))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"models.per_node[{k}]", str(exc))
        return out
    raise ConfigError("models", "need either 'shared' or 'per_node'")


def _build_process(cfg: dict, topology: Optional[network.Topology], base: Path):
    kind = _require(cfg, "kind", str, "process")
    if kind == "constant":
        path = (base / _require(cfg, "matrix", str, "process")).resolve()
        try:
            A = np.loadtxt(path, delimiter=",", ndmin=2)
            return network.ConstantWeights(A), str(path)
        except (OSError, ValueError) as exc:
            raise ConfigError("process.matrix", str(exc))
    if topology is None:
        raise ConfigError("network", "random link processes need a network section")
    alpha = cfg.get("alpha")
    if alpha is not None:
        alpha = float(alpha)
    try:
        if kind == "iid":
            return network.IidLinkFailures(topology, float(_require(cfg, "p", float, "process")), alpha), None
        if kind == "markov":
            return (
                network.MarkovLinkFailures(
                    topology,
                    float(_require(cfg, "q1", float, "process")),
                    float(_require(cfg, "q2", float, "process")),
                    alpha,
                ),
                None,
            )
    except ValueError as exc:
        raise ConfigError("process", str(exc))
    raise ConfigError("process.kind", f"unknown kind {kind!r}")


def _resolve_left_vector(process, spec: dict) -> Optional[np.ndarray]:
    if "a" in spec:
        return np.asarray(spec["a"], dtype=float)
    if isinstance(process, network.ConstantWeights):
        try:
            return network.left_perron_vector(process.A)
        except network.NotPrimitiveError as exc:
            raise ConfigError("process.matrix", f"no usable left Perron vector: {exc}")
    return None


def _resolve_center(cfg_region: dict, models, process) -> np.ndarray:
    center = cfg_region.get("center", "true-mean")
    if center == "true-mean":
        means = np.stack([mean_of(m) for m in models])
        a = _resolve_left_vector(process, {})
        if a is not None:
            return a @ means
        if np.max(np.abs(means - means[0])) > 1e-12:
            raise ConfigError(
                "region.center",
                "true-mean with a random link process needs identical model means",
            )
        return means[0]
    return np.atleast_1d(np.asarray(center, dtype=float))


def _isolation_reference(models, center: np.ndarray, zeta: float) -> Optional[float]:
    """inf of one node's rate over the ball complement, when it has a clean form."""
    model = models[0]
    first = json.dumps(engine_model_dict(model), sort_keys=True)
    for m in models[1:]:
        if json.dumps(engine_model_dict(m), sort_keys=True) != first:
            return None
    mean = mean_of(model)
    if isinstance(model, GaussianModel) and np.linalg.norm(mean - center) <= 1e-9:
        return rates.rate_over_ball_complement([model], [1.0], zeta)
    if model.dimension == 1:
        if abs(mean[0] - center[0]) >= zeta:
            return 0.0
        lo = rates.conjugate(model, [center[0] - zeta])
        hi = rates.conjugate(model, [center[0] + zeta])
        return min(lo, hi)
    return None


def engine_model_dict(model) -> dict:
    from .observation_models import model_to_dict

    return model_to_dict(model)


def cmd_simulate(spec_path: str, out_dir: str, seed: Optional[int] = None, threads: int = 1) -> int:
    spec_file = Path(spec_path)
    spec = _load_json(spec_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    run_seed = seed if seed is not None else _require(spec, "seed", int, "")
    topology = None
    if "network" in spec:
        topology = _build_topology(spec["network"], run_seed, spec_file.parent)
    process, matrix_path = _build_process(_require(spec, "process", dict, ""), topology, spec_file.parent)
    models = _build_models(_require(spec, "models", dict, ""), process.n)

    horizon = _positive_int(spec, "horizon")
    runs = _positive_int(spec, "runs")
    region_cfg = _require(spec, "region", dict, "")
    zeta = float(_require(region_cfg, "zeta", float, "region"))
    if zeta <= 0:
        raise ConfigError("region.zeta", f"must be positive, got {zeta}")
    center = _resolve_center(region_cfg, models, process)

    window = spec.get("window")
    if window is None:
        window = [max(1, int(0.4 * horizon) + 1), horizon]
    t_lo, t_hi = int(window[0]), int(window[1])
    if not (1 <= t_lo <= t_hi <= horizon):
        raise ConfigError("window", f"{window} outside the horizon 1..{horizon}")

    try:
        config = engine.SimulationConfig(
            models=models,
            process=process,
            horizon=horizon,
            runs=runs,
            region=engine.AccuracyRegion(center=center, radius=zeta),
            seed=run_seed,
        )
    except ValueError as exc:
        raise ConfigError("", str(exc))

    echo = dict(spec)
    echo["seed"] = run_seed
    echo["window"] = [t_lo, t_hi]
    echo["region"] = dict(region_cfg)
    echo["region"]["center"] = center.tolist()
    if matrix_path is not None:
        echo["process"] = dict(spec["process"])
        echo["process"]["matrix"] = matrix_path
    with open(out / "config-echo.json", "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
        fh.write("\n")

    try:
        table = engine.monte_carlo_error_probs(config, threads=threads)
    except NumericFailure as exc:
        print(f"simulation numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    table.to_csv(out / "probs.csv")

    iso = _isolation_reference(models, center, zeta)
    reference = None
    if iso is not None:
        reference = {"isolation_rate": iso, "fusion_rate": len(models) * iso}
    nodes = []
    p_hat = table.p_hat
    for i in range(table.n_nodes):
        try:
            est = engine.estimate_decay_rate(p_hat[i], (t_lo, t_hi))
            nodes.append(
                {"node": i, "slope": est.slope, "stderr": est.stderr, "n_points": est.n_points}
            )
        except engine.InsufficientDataError as exc:
            nodes.append({"node": i, "slope": None, "stderr": None, "reason": str(exc)})
    summary = {
        "name": spec.get("name", spec_file.stem),
        "window": [t_lo, t_hi],
        "nodes": nodes,
        "reference": reference,
        "config": echo,
    }
    with open(out / "slopes.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_design(problem_path: str, out_dir: str, seed: Optional[int] = None) -> int:
    problem_file = Path(problem_path)
    cfg = _load_json(problem_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    run_seed = seed if seed is not None else cfg.get("seed", 0)
    topology = _build_topology(_require(cfg, "topology", dict, ""), run_seed, problem_file.parent)
    covs = cfg.get("covariances")
    if covs is None:
        raise ConfigError("covariances", "missing required key")
    try:
        problem = design_mod.DesignProblem(
            covariances=np.asarray(covs, dtype=float),
            topology=topology,
            zeta=float(_require(cfg, "zeta", float, "")),
        )
    except ValueError as exc:
        raise ConfigError("covariances", str(exc))

    try:
        a_star, lambda_star = design_mod.optimize_left_eigenvector(problem)
        A, gamma = design_mod.synthesize_weight_matrix(topology, a_star)
        a_unif = np.full(topology.n, 1.0 / topology.n)
        lambda_unif = rates.symmetric_lambda_max(
            np.tensordot(a_unif**2, problem.covariances, axes=(0, 0))
        )
        A_unif, gamma_unif = design_mod.synthesize_weight_matrix(topology, a_unif)
    except design_mod.InfeasibleDesignError as exc:
        print(f"design infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    result = {
        "a_star": a_star.tolist(),
        "lambda_star": lambda_star,
        "rate_star": design_mod.design_rate(lambda_star, problem.zeta),
        "gamma": gamma,
        "zeta": problem.zeta,
        "baseline_uniform": {
            "a": a_unif.tolist(),
            "lambda": float(lambda_unif),
            "rate": design_mod.design_rate(float(lambda_unif), problem.zeta),
            "gamma": gamma_unif,
        },
    }
    with open(out / "design.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.savetxt(out / "A.csv", A, delimiter=",", fmt="%.17e")
    np.savetxt(out / "A_unif.csv", A_unif, delimiter=",", fmt="%.17e")
    network.save_topology(topology, out / "topology.txt")
    return EXIT_OK


def _parse_grid(grid: str, dimension: int) -> np.ndarray:
    try:
        start_s, stop_s, num_s = grid.split(":")
        start, stop, num = float(start_s), float(stop_s), int(num_s)
    except ValueError:
        raise ConfigError("grid", f"expected 'start:stop:num', got {grid!r}")
    if num < 1:
        raise ConfigError("grid", "num must be >= 1")
    axis = np.linspace(start, stop, num)
    return np.array(list(product(axis, repeat=dimension)))


def cmd_rates(spec_path: str, grid: str, out_path: str, numeric: bool = False) -> int:
    spec_file = Path(spec_path)
    spec = _load_json(spec_file)

    run_seed = spec.get("seed", 0)
    topology = None
    if "network" in spec:
        topology = _build_topology(spec["network"], run_seed, spec_file.parent)
    process = None
    if "process" in spec:
        process, _ = _build_process(spec["process"], topology, spec_file.parent)
        n = process.n
    elif topology is not None:
        n = topology.n
    else:
        raise ConfigError("network", "rates needs a process or network section to size the system")
    models = _build_models(_require(spec, "models", dict, ""), n)

    first = json.dumps(engine_model_dict(models[0]), sort_keys=True)
    if any(json.dumps(engine_model_dict(m), sort_keys=True) != first for m in models[1:]):
        raise ConfigError("models", "rate tabulation requires identical (i.i.d.) models")
    a = _resolve_left_vector(process, spec) if process is not None else (
        np.asarray(spec["a"], dtype=float) if "a" in spec else None
    )
    if a is None:
        raise ConfigError("process", "need a constant weight matrix or an explicit 'a' vector")
    if a.shape != (n,):
        raise ConfigError("a", f"expected length {n}, got {a.shape}")

    model = models[0]
    d = model.dimension
    points = _parse_grid(grid, d)
    gaussian = isinstance(model, GaussianModel)

    lines = [",".join([f"x{k}" for k in range(d)] + ["I", "I_tilde", "N_I"])]
    for x in points:
        if numeric:
            base = conjugate_numeric(model_oracle(model), x)
            mid = rates.tilde_rate_numeric(models, a, x)
        else:
            base = rates.conjugate(model, x)
            if gaussian:
                mid = rates.tilde_rate_gaussian(models, a, x)
            else:
                mid = rates.tilde_rate_numeric(models, a, x)
        row = [f"{float(xi)!r}" for xi in x] + [
            f"{float(base)!r}",
            f"{float(mid)!r}",
            f"{float(n * base)!r}",
        ]
        lines.append(",".join(row))
    out_file = Path(out_path)
    if out_file.parent != Path(""):
        out_file.parent.mkdir(parents=True, exist_ok=True)
    with open(out_file, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netrates",
        description="Consensus+innovations simulation, rate functions, and network design.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo error probabilities for an experiment spec")
    sim.add_argument("spec", help="experiment spec (JSON)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None, help="override the spec seed")
    sim.add_argument("--threads", type=int, default=1, help="worker threads (results unchanged)")

    des = sub.add_parser("design", help="optimize the left eigenvector and synthesize A")
    des.add_argument("problem", help="design problem (JSON)")
    des.add_argument("--out", required=True, help="output directory")
    des.add_argument("--seed", type=int, default=None, help="override the problem seed")

    rat = sub.add_parser("rates", help="tabulate I, I_tilde, N I on a grid")
    rat.add_argument("spec", help="experiment spec (JSON)")
    rat.add_argument("--grid", required=True, help="per-axis grid 'start:stop:num'")
    rat.add_argument("--out", required=True, help="output CSV path")
    rat.add_argument("--numeric", action="store_true", help="use the numeric conjugate path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.spec, args.out, seed=args.seed, threads=args.threads)
        if args.command == "design":
            return cmd_design(args.problem, args.out, seed=args.seed)
        if args.command == "rates":
            return cmd_rates(args.spec, args.grid, args.out, numeric=args.numeric)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
