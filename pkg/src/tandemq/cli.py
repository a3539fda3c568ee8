"""Command-line surface: solve, check, evaluate, simulate, oracle, sweep.

All outputs are canonical so repeated runs are byte-identical: fixed column
and key order, floats printed with Python's shortest round-trip repr.  Every
command drops a ``run_manifest.json`` next to its artifacts listing the
config hash, options, seeds and produced files (the manifest also records
wall-clock time, the one field that varies between runs).

Exit codes: 0 ok / all checks pass, 1 at least one check FAIL,
2 operational error (bad config, unconverged solve, refused enumeration).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dp, evaluation, structure
from .model import ConfigError, TandemModel, build_model

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_CHECK_FAIL = 1
EXIT_ERROR = 2

# Relative stability margin below which truncation error deserves a warning.
NEAR_CRITICAL_FRACTION = 0.05


class CliError(Exception):
    """Operational failure mapped to exit code 2."""


def _fmt(x) -> str:
    """Canonical scalar formatting: shortest round-trip repr for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _py(obj):
    """Recursively convert numpy scalars/arrays for JSON output."""
    if isinstance(obj, dict):
        return {k: _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_py(v) for v in obj.tolist()]
    return obj


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(_py(obj), indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}") from exc


def _model_from_args(args) -> tuple[TandemModel, dict]:
    raw = _load_config(args.config)
    model = build_model(raw)
    lam = model.arrival_rate
    m1, m2 = model.node1.mu[-1] - lam, model.node2.mu[-1] - lam
    if min(m1, m2) < NEAR_CRITICAL_FRACTION * lam:
        print(
            f"warning: stability margin {min(m1, m2):.4g} is below "
            f"{NEAR_CRITICAL_FRACTION:g}*lambda; truncation error grows near "
            "criticality, consider larger --l1/--l2",
            file=sys.stderr,
        )
    return model, raw


def _trunc_from_args(args) -> dp.TruncationSpec:
    return dp.TruncationSpec(L1=args.l1, L2=args.l2, margin=args.margin)


def _options_from_args(args) -> dp.SolverOptions:
    return dp.SolverOptions(tol=args.tol, max_iters=args.max_iters)


def _manifest(outdir: Path, command: str, args, artifacts: list[str],
              seeds: list[int], t0: float) -> None:
    config_path = getattr(args, "config", None)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_path": config_path,
        "config_sha256": _sha256(Path(config_path)) if config_path else None,
        "truncation": {
            "l1": getattr(args, "l1", None),
            "l2": getattr(args, "l2", None),
            "margin": getattr(args, "margin", None),
        },
        "options": {
            "tol": getattr(args, "tol", None),
            "max_iters": getattr(args, "max_iters", None),
            "threads": getattr(args, "threads", None),
        },
        "seeds": seeds,
        "artifacts": artifacts,
        "wall_clock_s": time.time() - t0,
    }
    _write_json(outdir / "run_manifest.json", doc)


def _write_value_csv(outdir: Path, solution: dp.Solution) -> None:
    n1, n2 = solution.v.shape
    rows = (
        [str(x1), str(x2), _fmt(solution.v[x1, x2])]
        for x1 in range(n1) for x2 in range(n2)
    )
    _write_csv(outdir / "value.csv", ["x1", "x2", "v"], rows)


def _write_policy_csv(outdir: Path, model: TandemModel,
                      solution: dp.Solution) -> None:
    pol = solution.policy
    n1, n2 = pol.a_idx.shape
    a_counts, b_counts = pol.a_counts, pol.b_counts
    rows = (
        [
            str(x1), str(x2),
            _fmt(model.node1.actions[pol.a_idx[x1, x2]]),
            _fmt(model.node2.actions[pol.b_idx[x1, x2]]),
            str(int(a_counts[x1, x2])),
            str(int(b_counts[x1, x2])),
        ]
        for x1 in range(n1) for x2 in range(n2)
    )
    _write_csv(
        outdir / "policy.csv",
        ["x1", "x2", "a_value", "b_value", "a_argmin_count", "b_argmin_count"],
        rows,
    )


def _solution_summary(model: TandemModel, solution: dp.Solution) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "g": solution.g,
        "g_lower": solution.g_lower,
        "g_upper": solution.g_upper,
        "iterations": solution.iterations,
        "final_span": solution.final_span,
        "converged": solution.converged,
        "uniformization_rate": model.uniformization_rate,
        "l1": solution.trunc.L1,
        "l2": solution.trunc.L2,
        "margin": solution.trunc.margin,
        "tol": solution.options.tol,
        "max_iters": solution.options.max_iters,
        "tie_tol": solution.options.tie_tol,
        "x_ref": list(solution.options.x_ref),
    }


def cmd_solve(args) -> int:
    t0 = time.time()
    model, _ = _model_from_args(args)
    trunc = _trunc_from_args(args)
    solution = dp.rvi_solve(model, trunc, _options_from_args(args))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_value_csv(outdir, solution)
    _write_policy_csv(outdir, model, solution)
    _write_json(outdir / "solution.json", _solution_summary(model, solution))
    _manifest(outdir, "solve", args,
              ["value.csv", "policy.csv", "solution.json"], [], t0)
    print(f"g = {solution.g!r} (span {solution.final_span:.3e}, "
          f"{solution.iterations} iterations)")
    if not solution.converged and not args.allow_unconverged:
        print("error: solver did not converge within --max-iters",
              file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def _violation_dict(v: structure.Violation) -> dict:
    return {
        "states": [list(s) for s in v.states],
        "lhs": v.lhs,
        "rhs": v.rhs,
        "magnitude": v.magnitude,
    }


def _report_dict(report: structure.CheckReport, model: TandemModel,
                 solution: dp.Solution) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "overall": "PASS" if report.ok else "FAIL",
        "g": solution.g,
        "params": report.params,
        "checks": [
            {
                "check": e.check,
                "status": e.status,
                "n_violations": len(e.violations),
                "violations": [_violation_dict(v) for v in e.violations],
                "evidence": e.evidence,
            }
            for e in report.entries
        ],
    }


def cmd_check(args) -> int:
    t0 = time.time()
    model, _ = _model_from_args(args)
    trunc = _trunc_from_args(args)
    solution = dp.rvi_solve(model, trunc, _options_from_args(args))
    if not solution.converged:
        print("error: solver did not converge; checks need a converged "
              "solution", file=sys.stderr)
        return EXIT_ERROR
    report = structure.run_all_checks(model, solution, trunc, mode=args.mode)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "report.json", _report_dict(report, model, solution))
    _manifest(outdir, "check", args, ["report.json"], [], t0)
    for e in report.entries:
        print(f"{e.check}: {e.status}"
              + (f" ({len(e.violations)} violations)" if e.violations else ""))
    return EXIT_OK if report.ok else EXIT_CHECK_FAIL


def _read_policy_csv(path: str, model: TandemModel,
                     trunc: dp.TruncationSpec) -> dp.PolicyTable:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise CliError(f"policy file not found: {path}") from exc
    if not lines or not lines[0].startswith("x1,x2,a_value,b_value"):
        raise CliError("policy file must start with header x1,x2,a_value,b_value")
    n1, n2 = trunc.shape
    a_idx = np.full((n1, n2), -1, dtype=int)
    b_idx = np.full((n1, n2), -1, dtype=int)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 4:
            raise CliError(f"policy file line {lineno}: expected >= 4 columns")
        x1, x2 = int(parts[0]), int(parts[1])
        if not (0 <= x1 <= trunc.L1 and 0 <= x2 <= trunc.L2):
            raise CliError(f"policy file line {lineno}: state ({x1},{x2}) "
                           "outside the box")
        a_val, b_val = float(parts[2]), float(parts[3])
        a_hits = np.flatnonzero(model.node1.actions == a_val)
        b_hits = np.flatnonzero(model.node2.actions == b_val)
        if len(a_hits) != 1 or len(b_hits) != 1:
            raise CliError(f"policy file line {lineno}: action value not on "
                           "the model grid")
        a_idx[x1, x2] = a_hits[0]
        b_idx[x1, x2] = b_hits[0]
    if np.any(a_idx < 0):
        missing = np.argwhere(a_idx < 0)[0]
        raise CliError(f"policy file misses state ({missing[0]},{missing[1]}) "
                       "of the box")
    return dp.PolicyTable.from_indices(a_idx, b_idx, model.node1.n_actions,
                                       model.node2.n_actions)


def _policy_from_args(args, model: TandemModel,
                      trunc: dp.TruncationSpec) -> dp.PolicyTable:
    if args.from_solve:
        solution = dp.rvi_solve(model, trunc, _options_from_args(args))
        if not solution.converged:
            raise CliError("solver did not converge while deriving the policy")
        return solution.policy
    if not args.policy:
        raise CliError("provide a policy file or --from-solve")
    return _read_policy_csv(args.policy, model, trunc)


def cmd_evaluate(args) -> int:
    t0 = time.time()
    model, _ = _model_from_args(args)
    trunc = _trunc_from_args(args)
    policy = _policy_from_args(args, model, trunc)
    chain = evaluation.policy_chain(model, policy, trunc)
    try:
        pi = evaluation.stationary_distribution(chain)
    except evaluation.NotConvergedError as exc:
        raise CliError(str(exc)) from exc
    g = evaluation.average_cost(model, policy, pi)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "eval.json", {
        "schema_version": SCHEMA_VERSION,
        "g": g,
        "pi_residual": pi.residual,
        "pi_iterations": pi.iterations,
        "reducible_suspected": pi.reducible_suspected,
        "l1": trunc.L1,
        "l2": trunc.L2,
    })
    _manifest(outdir, "evaluate", args, ["eval.json"], [], t0)
    print(f"g = {g!r} (pi residual {pi.residual:.3e})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.time()
    model, _ = _model_from_args(args)
    trunc = _trunc_from_args(args)
    policy = _policy_from_args(args, model, trunc)
    est = evaluation.simulate(model, policy, n_events=args.events,
                              seed=args.seed, warmup_frac=args.warmup,
                              n_batches=args.batches)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "sim.json", {
        "schema_version": SCHEMA_VERSION,
        "g_hat": est.g_hat,
        "half_width": est.half_width,
        "batches": est.batches,
        "events": est.events,
        "seed": est.seed,
        "warmup_frac": args.warmup,
    })
    _manifest(outdir, "simulate", args, ["sim.json"], [args.seed], t0)
    print(f"g_hat = {est.g_hat!r} +/- {est.half_width!r} (95% CI)")
    return EXIT_OK


def cmd_oracle(args) -> int:
    t0 = time.time()
    model, _ = _model_from_args(args)
    trunc = _trunc_from_args(args)
    try:
        g_star, best = evaluation.brute_force_optimal(model, trunc)
    except evaluation.TooLargeError as exc:
        raise CliError(str(exc)) from exc
    solution = dp.rvi_solve(model, trunc, _options_from_args(args))
    n1, n2 = trunc.shape
    policy_rows = [
        [x1, x2,
         float(model.node1.actions[best.a_idx[x1, x2]]),
         float(model.node2.actions[best.b_idx[x1, x2]])]
        for x1 in range(n1) for x2 in range(n2)
    ]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "oracle.json", {
        "schema_version": SCHEMA_VERSION,
        "g_star": g_star,
        "g_rvi": solution.g,
        "delta": solution.g - g_star,
        "n_policies": evaluation.policy_space_size(model, trunc),
        "policy": policy_rows,
    })
    _manifest(outdir, "oracle", args, ["oracle.json"], [], t0)
    print(f"g_star = {g_star!r}, g_rvi = {solution.g!r}, "
          f"delta = {solution.g - g_star!r}")
    return EXIT_OK


def _set_config_path(raw: dict, path: str, value: float) -> None:
    segments = path.split(".")
    target = raw
    for seg in segments[:-1]:
        if isinstance(target, list):
            target = target[int(seg)]
        elif isinstance(target, dict) and seg in target:
            target = target[seg]
        else:
            raise CliError(f"invalid --param path: {path}")
    last = segments[-1]
    if isinstance(target, list):
        try:
            idx = int(last)
            target[idx]
        except (ValueError, IndexError) as exc:
            raise CliError(f"invalid --param path: {path}") from exc
        target[idx] = value
    elif isinstance(target, dict) and last in target:
        if isinstance(target[last], (dict, list)):
            raise CliError(f"--param path must address a scalar: {path}")
        target[last] = value
    else:
        raise CliError(f"invalid --param path: {path}")


def _first_max_threshold(marginal: np.ndarray, n_actions: int) -> int:
    hits = np.flatnonzero(marginal == n_actions - 1)
    return int(hits[0]) if len(hits) else -1


def cmd_sweep(args) -> int:
    t0 = time.time()
    base = _load_config(args.config)
    trunc = _trunc_from_args(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"--values must be comma-separated numbers: {exc}") from exc
    if not values:
        raise CliError("--values is empty")

    rows = []
    for value in values:
        raw = json.loads(json.dumps(base))  # deep copy, keeps plain types
        _set_config_path(raw, args.param, value)
        try:
            model = build_model(raw)
        except ConfigError as exc:
            raise CliError(f"{args.param}={value!r}: {exc}") from exc
        solution = dp.rvi_solve(model, trunc, _options_from_args(args))
        if not solution.converged:
            raise CliError(f"{args.param}={value!r}: solver did not converge")
        pol = solution.policy
        f1, f2, decoupling = dp.extract_marginals(pol, trunc)
        m = trunc.margin
        n_a, n_b = model.node1.n_actions, model.node2.n_actions
        a_ex = np.isin(pol.a_idx[m:trunc.L1 - m + 1, m:trunc.L2 - m + 1],
                       [0, n_a - 1])
        b_ex = np.isin(pol.b_idx[m:trunc.L1 - m + 1, m:trunc.L2 - m + 1],
                       [0, n_b - 1])
        rows.append([
            _fmt(value),
            _fmt(solution.g),
            _fmt(float((a_ex & b_ex).mean())),
            str(len(decoupling)),
            str(_first_max_threshold(f1, n_a)),
            str(_first_max_threshold(f2, n_b)),
            _fmt(2 * model.h2 >= model.h1),
            _fmt(model.h1 >= model.h2),
        ])

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "sweep.csv",
               ["param", "g", "bang_bang_fraction", "decoupling_violations",
                "a_max_threshold_x1", "b_max_threshold_x2",
                "gate_swap_ii", "gate_swap_iii"],
               rows)
    _manifest(outdir, "sweep", args, ["sweep.csv"], [], t0)
    print(f"wrote {len(rows)} sweep rows to {outdir / 'sweep.csv'}")
    return EXIT_OK


def _table_from_family(spec: str, actions: list[float], what: str) -> list[float]:
    kind, _, rest = spec.partition(":")
    if kind == "table":
        vals = [float(v) for v in rest.split(",")]
        if len(vals) != len(actions):
            raise CliError(f"{what}: table length {len(vals)} != grid length "
                           f"{len(actions)}")
        return vals
    if kind == "linear":
        k = float(rest)
        return [k * a for a in actions]
    if kind == "power":
        p_str, _, k_str = rest.partition(":")
        p = float(p_str)
        k = float(k_str) if k_str else 1.0
        return [k * a ** p for a in actions]
    raise CliError(f"{what}: unknown family '{kind}' "
                   "(use linear:k, power:p[:k], table:v0,v1,...)")


def cmd_make_config(args) -> int:
    def grid(text: str) -> list[float]:
        return [float(v) for v in text.split(",")]

    actions1, actions2 = grid(args.actions1), grid(args.actions2)
    doc = {
        "lambda": args.arrival_rate,
        "h1": args.h1,
        "h2": args.h2,
        "node1": {
            "actions": actions1,
            "mu": _table_from_family(args.mu1, actions1, "mu1"),
            "cost": _table_from_family(args.cost1, actions1, "cost1"),
        },
        "node2": {
            "actions": actions2,
            "mu": _table_from_family(args.mu2, actions2, "mu2"),
            "cost": _table_from_family(args.cost2, actions2, "cost2"),
        },
    }
    build_model(doc)  # reject invalid configs before writing
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, doc)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tandemq",
        description="Average-cost service-resource allocation for a two-node "
                    "tandem queue: solve, verify structure, evaluate and "
                    "simulate policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--l1", type=int, default=60, help="node-1 buffer cap")
    common.add_argument("--l2", type=int, default=60, help="node-2 buffer cap")
    common.add_argument("--tol", type=float, default=1e-9,
                        help="span stopping threshold")
    common.add_argument("--max-iters", type=int, default=200_000)
    common.add_argument("--margin", type=int, default=3,
                        help="boundary exclusion width for checks")
    common.add_argument("--threads", type=int, default=0,
                        help="worker hint; results are unaffected")
    common.add_argument("--outdir", default="out", help="artifact directory")

    p = sub.add_parser("solve", parents=[common],
                       help="optimal policy via relative value iteration")
    p.add_argument("config")
    p.add_argument("--allow-unconverged", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", parents=[common],
                       help="solve, then verify all structural properties")
    p.add_argument("config")
    p.add_argument("--mode", choices=["default", "info"], default="default")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("evaluate", parents=[common],
                       help="exact average cost of a fixed policy")
    p.add_argument("config")
    p.add_argument("--policy", help="policy.csv to evaluate")
    p.add_argument("--from-solve", action="store_true",
                   help="evaluate the freshly solved policy")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common],
                       help="simulation estimate of a fixed policy's cost")
    p.add_argument("config")
    p.add_argument("--policy", help="policy.csv to simulate")
    p.add_argument("--from-solve", action="store_true")
    p.add_argument("--events", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--warmup", type=float, default=0.2)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", parents=[common],
                       help="exhaustive policy enumeration on a tiny box")
    p.add_argument("config")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", parents=[common],
                       help="re-solve over a range of one scalar config key")
    p.add_argument("config")
    p.add_argument("--param", required=True,
                   help="dotted config path, e.g. lambda or node1.mu.1")
    p.add_argument("--values", required=True,
                   help="comma-separated parameter values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("make-config",
                       help="generate a config from named rate/cost families")
    p.add_argument("--lambda", dest="arrival_rate", type=float, required=True)
    p.add_argument("--h1", type=float, required=True)
    p.add_argument("--h2", type=float, required=True)
    p.add_argument("--actions1", required=True, help="grid, e.g. 0,0.5,1")
    p.add_argument("--mu1", required=True, help="linear:k | power:p[:k] | table:...")
    p.add_argument("--cost1", required=True)
    p.add_argument("--actions2", required=True)
    p.add_argument("--mu2", required=True)
    p.add_argument("--cost2", required=True)
    p.add_argument("-o", "--output", default="config.json")
    p.set_defaults(func=cmd_make_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
