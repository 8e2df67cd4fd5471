"""Command-line front end: ``solve-ot``, ``train``, ``sweep``, ``verify``.

Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 runtime failure (solver breakdown, training abort). The ``OTRL_LOG``
environment variable sets log verbosity (error / info / debug; default
error). All artifacts of a run are written under one output directory and
identical invocations produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import learning, theorems
from .errors import (
    ConfigError,
    ConvergenceFailureError,
    EnumerationTooLargeError,
    GridParseError,
    InvalidInputError,
    OtrlError,
    SolverFailureError,
    TrainingAbortedError,
)
from .mdp import Gridworld, GridworldSpec, build_gridworld
from .transport import (
    CostMatrix,
    DiscreteDistribution,
    build_cost_matrix,
    ot_distance,
    solve_exact,
    solve_regularized,
)

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_USAGE_ERRORS = (
    ConfigError,
    GridParseError,
    InvalidInputError,
    EnumerationTooLargeError,
)
_RUNTIME_ERRORS = (SolverFailureError, ConvergenceFailureError, TrainingAbortedError)

log = logging.getLogger("otrl")


def _configure_logging() -> None:
    level_name = os.environ.get("OTRL_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        level_name = "error"
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers.clear()
    log.addHandler(handler)
    log.setLevel(levels[level_name])


def _format_cost(value: float) -> str:
    """Positional format with 12 significant digits (zero prints as 0.000...)."""
    if value == 0.0:
        return "0.000000000000"
    exponent = math.floor(math.log10(abs(value)))
    decimals = max(0, 11 - exponent)
    return f"{value:.{decimals}f}"


def _float_repr(value) -> str:
    return repr(float(value))


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as err:
        raise ConfigError(f"cannot write {path}: {err}") from err


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row))
    _write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Input file parsing (solve-ot)
# ---------------------------------------------------------------------------

def _parse_float(token: str, path: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError as err:
        raise ConfigError(f"{path}, line {lineno}: {token!r} is not a number") from err


def _read_weights(path: str) -> np.ndarray:
    values = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    for lineno, line in enumerate(lines, start=1):
        token = line.strip()
        if not token:
            continue
        parts = token.split()
        if len(parts) != 1:
            raise ConfigError(f"{path}, line {lineno}: expected one weight per line")
        values.append(_parse_float(parts[0], path, lineno))
    if not values:
        raise ConfigError(f"{path}: no weights found")
    return np.array(values)


def _read_matrix(path: str) -> np.ndarray:
    rows = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    for lineno, line in enumerate(lines, start=1):
        token = line.strip()
        if not token:
            continue
        rows.append([_parse_float(t, path, lineno) for t in token.replace(",", " ").split()])
    if not rows:
        raise ConfigError(f"{path}: no rows found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"{path}: rows have inconsistent lengths {sorted(widths)}")
    return np.array(rows)


# ---------------------------------------------------------------------------
# Run configuration (train / sweep)
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    gridworld: Gridworld
    risk: DiscreteDistribution
    cost: CostMatrix
    rl: learning.RiskAwareConfig
    ot_solver: str
    ot_epsilon: float | None
    sweep_lambdas: list[float]
    sweep_method: str
    ball_delta: float | None
    out_dir: Path
    seed: int


def _expect_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def load_run_config(
    path: str,
    out_override: str | None = None,
    seed_override: int | None = None,
    mode_override: str | None = None,
    dist_override: str | None = None,
) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    cfg_path = Path(path)
    try:
        raw = json.loads(cfg_path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top-level config must be a JSON object")
    _expect_keys(
        raw, {"environment", "risk", "ot", "rl", "sweep", "out_dir", "seed"}, "config"
    )

    env = raw.get("environment")
    if not isinstance(env, dict):
        raise ConfigError("config requires an 'environment' object")
    _expect_keys(
        env,
        {"map", "map_file", "step_reward", "goal_reward", "hazard_reward",
         "slip_prob", "discount"},
        "environment",
    )
    if ("map" in env) == ("map_file" in env):
        raise ConfigError("environment needs exactly one of 'map' or 'map_file'")
    if "map" in env:
        rows = env["map"]
        if not isinstance(rows, list) or not all(isinstance(r, str) for r in rows):
            raise ConfigError("environment.map must be an array of row strings")
        rows = tuple(rows)
    else:
        map_path = cfg_path.parent / env["map_file"]
        try:
            text = map_path.read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read map file {map_path}: {err}") from err
        rows = tuple(line for line in text.splitlines() if line.strip() != "")
    spec = GridworldSpec(
        rows=rows,
        step_reward=float(env.get("step_reward", -1.0)),
        goal_reward=float(env.get("goal_reward", 10.0)),
        hazard_reward=float(env.get("hazard_reward", -1.0)),
        slip_prob=float(env.get("slip_prob", 0.0)),
    )
    world = build_gridworld(spec, discount=float(env.get("discount", 0.9)))
    n = world.mdp.n_states

    risk_spec = raw.get("risk", "uniform-safe")
    if isinstance(risk_spec, str):
        if risk_spec == "uniform-safe":
            risk = world.risk
        elif risk_spec.startswith("dirac:"):
            try:
                state = int(risk_spec.split(":", 1)[1])
            except ValueError as err:
                raise ConfigError(f"bad risk spec {risk_spec!r}") from err
            if not 0 <= state < n:
                raise ConfigError(f"risk dirac state {state} out of range (n={n})")
            risk = DiscreteDistribution.dirac(n, state)
        else:
            raise ConfigError(f"unknown risk spec {risk_spec!r}")
    elif isinstance(risk_spec, list):
        if len(risk_spec) != n:
            raise ConfigError(f"custom risk vector has {len(risk_spec)} entries, need {n}")
        risk = DiscreteDistribution(np.array(risk_spec, dtype=float))
    else:
        raise ConfigError("risk must be a string or an array of weights")

    ot = raw.get("ot", {})
    if not isinstance(ot, dict):
        raise ConfigError("'ot' must be an object")
    _expect_keys(ot, {"solver", "epsilon", "normalize_cost"}, "ot")
    solver = ot.get("solver", "exact")
    if solver not in ("exact", "regularized"):
        raise ConfigError(f"ot.solver must be 'exact' or 'regularized', got {solver!r}")
    epsilon = ot.get("epsilon")
    if epsilon is not None:
        epsilon = float(epsilon)
    cost = build_cost_matrix(world.embedding, normalize=bool(ot.get("normalize_cost", False)))

    seed = int(raw.get("seed", 0))
    if seed_override is not None:
        seed = seed_override

    rl = dict(raw.get("rl", {}))
    if not isinstance(rl, dict):
        raise ConfigError("'rl' must be an object")
    if "lambda" in rl:
        rl["lam"] = float(rl.pop("lambda"))
    allowed_rl = {
        "lam", "alpha0", "alpha_decay", "epsilon0", "epsilon_decay", "episodes",
        "max_steps_per_episode", "penalty_mode", "recompute_interval",
        "distribution_mode", "penalty_scaling", "damping",
    }
    _expect_keys(rl, allowed_rl, "rl")
    if mode_override is not None:
        rl["penalty_mode"] = mode_override
    if dist_override is not None:
        rl["distribution_mode"] = dist_override
    try:
        rl_config = learning.RiskAwareConfig(seed=seed, **rl)
    except TypeError as err:
        raise ConfigError(f"bad rl settings: {err}") from err

    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("'sweep' must be an object")
    _expect_keys(sweep, {"lambdas", "method", "ball_delta"}, "sweep")
    lambdas = sweep.get("lambdas", [])
    if not isinstance(lambdas, list):
        raise ConfigError("sweep.lambdas must be an array")
    method = sweep.get("method", "brute")
    if method not in ("brute", "qlearning"):
        raise ConfigError(f"sweep.method must be 'brute' or 'qlearning', got {method!r}")
    ball_delta = sweep.get("ball_delta")
    if ball_delta is not None:
        ball_delta = float(ball_delta)

    out_dir = raw.get("out_dir")
    if out_override is not None:
        out_dir = out_override
    if not out_dir:
        raise ConfigError("config requires 'out_dir' (or pass --out)")

    return RunConfig(
        gridworld=world,
        risk=risk,
        cost=cost,
        rl=rl_config,
        ot_solver=solver,
        ot_epsilon=epsilon,
        sweep_lambdas=[float(l) for l in lambdas],
        sweep_method=method,
        ball_delta=ball_delta,
        out_dir=Path(out_dir),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# solve-ot
# ---------------------------------------------------------------------------

def cmd_solve_ot(args) -> int:
    mu = DiscreteDistribution(_read_weights(args.mu))
    nu = DiscreteDistribution(_read_weights(args.nu))
    if args.cost is not None:
        C = CostMatrix(_read_matrix(args.cost))
    else:
        C = build_cost_matrix(_read_matrix(args.embedding), normalize=args.normalize_cost)
    if not (mu.n == nu.n == C.n):
        raise ConfigError(
            f"sizes disagree: mu has {mu.n}, nu has {nu.n}, cost has {C.n}"
        )
    if args.solver == "exact":
        solution = solve_exact(mu, nu, C)
    else:
        solution = solve_regularized(
            mu, nu, C, epsilon=args.epsilon, max_iter=args.max_iter, tol=args.tol
        )
    log.info("solved %d-state OT instance in %d iterations", mu.n, solution.iterations)
    print(_format_cost(solution.cost))
    if args.plan_out:
        rows = (
            [str(i), str(j), _float_repr(solution.plan.coupling[i, j])]
            for i in range(mu.n)
            for j in range(nu.n)
        )
        _write_csv(Path(args.plan_out), ["source", "target", "mass"], rows)
    if args.duals_out:
        rows = (
            [str(i), _float_repr(solution.dual_source[i]), _float_repr(solution.dual_target[i])]
            for i in range(mu.n)
        )
        _write_csv(Path(args.duals_out), ["state", "dual_source", "dual_target"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(
        args.config,
        out_override=args.out,
        seed_override=args.seed,
        mode_override=args.mode,
        dist_override=args.dist,
    )
    world = cfg.gridworld
    q, training_log = learning.risk_aware_q_learning(
        world.mdp, cfg.risk, cfg.cost, cfg.rl,
        hazard_states=world.hazard_states,
        ot_solver=cfg.ot_solver,
        ot_epsilon=cfg.ot_epsilon,
    )
    greedy = learning.greedy_policy(q)

    rows = (
        [
            str(ep),
            _float_repr(training_log.raw_returns[ep]),
            _float_repr(training_log.penalized_returns[ep]),
            _float_repr(training_log.ot_costs[ep]),
            str(int(training_log.hazard_visits[ep])),
            _float_repr(training_log.epsilons[ep]),
        ]
        for ep in range(training_log.episodes)
    )
    _write_csv(
        cfg.out_dir / "training_log.csv",
        ["episode", "raw_return", "penalized_return", "ot_cost", "hazard_visits", "epsilon"],
        rows,
    )
    _write_csv(
        cfg.out_dir / "q_table.csv",
        ["state", "action", "value"],
        (
            [str(s), str(a), _float_repr(q.values[s, a])]
            for s in range(world.mdp.n_states)
            for a in range(world.mdp.n_actions)
        ),
    )
    _write_csv(
        cfg.out_dir / "greedy_policy.csv",
        ["state", "action"],
        ([str(s), str(int(a))] for s, a in enumerate(greedy.actions)),
    )

    dist_mode = (
        cfg.rl.distribution_mode
        if cfg.rl.distribution_mode in ("stationary", "occupancy")
        else "stationary"
    )
    visitation = learning._visitation(world.mdp, greedy, dist_mode, cfg.rl.damping)
    final_d = ot_distance(visitation, cfg.risk, cfg.cost)
    expected = learning._expected_return(world.mdp, greedy)
    kappa = learning._kappa(cfg.rl.penalty_scaling, world.mdp.discount)
    summary = {
        "lambda": cfg.rl.lam,
        "penalty_mode": cfg.rl.penalty_mode,
        "distribution_mode": dist_mode,
        "ot_distance": final_d,
        "expected_return": expected,
        "objective": learning._objective_value(expected, final_d, cfg.rl.lam, kappa),
        "episodes": cfg.rl.episodes,
        "seed": cfg.rl.seed,
    }
    _write_text(cfg.out_dir / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    log.info("train artifacts written to %s", cfg.out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    cfg = load_run_config(
        args.config,
        out_override=args.out,
        seed_override=args.seed,
        mode_override=args.mode,
        dist_override=args.dist,
    )
    if not cfg.sweep_lambdas:
        raise ConfigError("sweep.lambdas must be a nonempty ascending list")
    world = cfg.gridworld
    result = learning.lambda_sweep(
        world.mdp, cfg.risk, cfg.cost, cfg.sweep_lambdas,
        method=cfg.sweep_method,
        config=cfg.rl,
        hazard_states=world.hazard_states,
        ball_delta=cfg.ball_delta,
        ot_solver=cfg.ot_solver,
        ot_epsilon=cfg.ot_epsilon,
    )
    rows = (
        [
            _float_repr(rec.lam),
            _float_repr(rec.expected_return),
            _float_repr(rec.ot_dist),
            _float_repr(rec.objective),
            _float_repr(rec.hazard_mass),
            _float_repr(rec.ball_mass),
        ]
        for rec in result.records
    )
    _write_csv(
        cfg.out_dir / "sweep.csv",
        ["lambda", "expected_return", "ot_distance", "objective", "hazard_mass", "ball_mass"],
        rows,
    )
    log.info("sweep artifacts written to %s", cfg.out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    try:
        theorem_ids = [int(t) for t in args.theorems.split(",") if t.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"bad --theorems value {args.theorems!r}") from err
    if not theorem_ids:
        raise ConfigError("no theorem ids given")
    for tid in theorem_ids:
        if tid not in (1, 2, 3, 4):
            raise ConfigError(f"unknown theorem id {tid}")
    if args.instances < 1:
        raise ConfigError("--instances must be >= 1")
    dist_modes = ["stationary", "occupancy"] if args.dist == "both" else [args.dist]

    out_dir = Path(args.out)
    reports: list[theorems.TheoremReport] = []
    hard_failures = 0
    for dist_mode in dist_modes:
        for tid in sorted(theorem_ids):
            if tid == 4:
                witness = theorems.witness_check(dist_mode=dist_mode)
                reports.append(witness)
                if witness.verdict != theorems.VERDICT_HOLDS:
                    hard_failures += 1
            for k in range(args.instances):
                report = theorems.run_check(
                    tid,
                    seed=args.seed + k,
                    n_states=args.states,
                    n_actions=args.actions,
                    gamma=args.gamma,
                    dist_mode=dist_mode,
                )
                reports.append(report)
                if tid != 4 and report.verdict == theorems.VERDICT_VIOLATED:
                    hard_failures += 1

    _write_text(
        out_dir / "theorem_reports.jsonl",
        "".join(r.to_json() + "\n" for r in reports),
    )

    print(f"{'theorem':>8} {'dist':>11} {'instances':>10} {'holds':>6} {'violated':>9} {'vacuous':>8}")
    for dist_mode in dist_modes:
        for tid in sorted(theorem_ids):
            group = [
                r for r in reports
                if r.theorem_id == tid and r.descriptor.get("dist_mode") == dist_mode
            ]
            counts = {v: sum(1 for r in group if r.verdict == v)
                      for v in ("holds", "violated", "vacuous")}
            print(
                f"{tid:>8} {dist_mode:>11} {len(group):>10} "
                f"{counts['holds']:>6} {counts['violated']:>9} {counts['vacuous']:>8}"
            )
    print(f"reports: {out_dir / 'theorem_reports.jsonl'}")
    return EXIT_VERIFICATION_FAILED if hard_failures else EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otrl",
        description="Risk-aware tabular RL with optimal-transport penalties.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ot = sub.add_parser("solve-ot", help="solve one discrete OT instance")
    p_ot.add_argument("mu", help="source distribution file, one weight per line")
    p_ot.add_argument("nu", help="target distribution file, one weight per line")
    group = p_ot.add_mutually_exclusive_group(required=True)
    group.add_argument("--embedding", help="state embedding file, one vector per line")
    group.add_argument("--cost", help="explicit cost matrix file")
    p_ot.add_argument("--solver", choices=("exact", "regularized"), default="exact")
    p_ot.add_argument("--epsilon", type=float, default=None,
                      help="entropic regularization (default 1e-2 * max cost)")
    p_ot.add_argument("--max-iter", type=int, default=10_000)
    p_ot.add_argument("--tol", type=float, default=1e-9)
    p_ot.add_argument("--normalize-cost", action="store_true")
    p_ot.add_argument("--plan-out", help="write the transport plan as CSV")
    p_ot.add_argument("--duals-out", help="write dual potentials as CSV")
    p_ot.set_defaults(func=cmd_solve_ot)

    for name, fn, help_text in (
        ("train", cmd_train, "run penalized Q-learning from a config"),
        ("sweep", cmd_sweep, "sweep the risk sensitivity over a lambda grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--mode", choices=learning.PENALTY_MODES, default=None,
                       help="penalty mode override")
        p.add_argument("--dist", choices=("stationary", "occupancy"), default=None,
                       help="visitation distribution override")
        p.set_defaults(func=fn)

    p_ver = sub.add_parser("verify", help="run theorem checks on random instances")
    p_ver.add_argument("--theorems", default="1,2,3,4",
                       help="comma-separated theorem ids (default all)")
    p_ver.add_argument("--instances", type=int, default=20)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--out", default="otrl-verify", help="report output directory")
    p_ver.add_argument("--dist", choices=("stationary", "occupancy", "both"),
                       default="both")
    p_ver.add_argument("--states", type=int, default=4)
    p_ver.add_argument("--actions", type=int, default=2)
    p_ver.add_argument("--gamma", type=float, default=0.9)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except _USAGE_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except _RUNTIME_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except OtrlError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
