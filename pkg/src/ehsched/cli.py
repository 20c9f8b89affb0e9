"""Command-line front end: solve, simulate, sweep, verify.

Every run resolves its configuration (JSON file + --set overrides), writes
its artifacts into --out, and finishes with a manifest.json echoing the
resolved config, seed and artifact list — enough to reproduce the run
bit-exactly. Exit codes: 0 success, 2 validation, 3 non-convergence,
4 certificate failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .constrained import (
    BudgetInfeasibleError,
    ConstrainedSearchError,
    ConstrainedSolverConfig,
    solve_constrained,
)
from .heuristics import HeuristicKind, calibrate_xi, make_heuristic
from .io import (
    dump_json,
    evaluation_dict,
    search_trace_rows,
    sim_result_dict,
    sim_trace_rows,
    solve_trace_rows,
    write_csv,
    write_json,
    write_policy_artifacts,
)
from .mdp import (
    NonConvergenceError,
    SolverConfig,
    evaluate_policy,
    relative_value_iteration,
)
from .model import CapacityError, ConfigError, load_model, model_to_config
from .sim import SimConfig, run_simulation, sweep_arrival, sweep_budget, sweep_channel
from .verify import any_hard_failure, format_reports, reports_to_json, run_all_checks

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CERTIFICATE = 4

FORMAT_VERSION = 1


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """--set key=value with dotted paths; the key must already exist.

    Values parse as JSON when possible (numbers, lists, booleans), otherwise
    they stay strings.
    """
    for item in assignments:
        path, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        keys = path.split(".")
        node = cfg
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"--set {path}: no such config section {k!r}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"--set {path}: no such config key {leaf!r}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return cfg


def _load(args):
    with open(args.config) as fh:
        cfg = json.load(fh)
    cfg = apply_overrides(cfg, args.set or [])
    return load_model(cfg), cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, cfg: dict, artifacts: list[str],
                    extra: dict | None = None) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "subcommand": args.subcommand,
        "config_path": str(args.config),
        "config": cfg,
        "out": str(args.out),
        "seed": args.seed,
        "overrides": list(args.set or []),
        "artifacts": sorted(artifacts + ["manifest.json"]),
    }
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)


def cmd_solve(args) -> int:
    model, cfg = _load(args)
    out = _out_dir(args)
    artifacts: list[str] = []
    if args.constrained:
        sol = solve_constrained(ConstrainedSolverConfig(), model)
        artifacts += write_policy_artifacts(out, sol.policy, model)
        ev = evaluation_dict(sol.evaluation)
        ev.update({"kind": sol.kind, "beta_star": sol.beta_star, "xi": sol.xi,
                   "achieved_b": sol.achieved_b, "achieved_k": sol.achieved_k,
                   "nu_used": sol.nu_used, "beta_plus": sol.beta_plus,
                   "beta_minus": sol.beta_minus})
        write_json(out / "eval.json", ev)
        write_csv(out / "search_trace.csv", search_trace_rows(sol.trace))
        artifacts += ["eval.json", "search_trace.csv"]
        flags = {"constrained": True}
    else:
        res = relative_value_iteration(SolverConfig(beta=args.beta), model)
        exact = evaluate_policy(res.policy, args.beta, model)
        artifacts += write_policy_artifacts(out, res.policy, model,
                                            values=res.values.values)
        ev = evaluation_dict(exact)
        ev.update({"gain": res.gain, "n_iters": res.n_iters,
                   "residual": res.residual,
                   "gain_bounds": list(res.gain_bounds)})
        write_json(out / "eval.json", ev)
        write_csv(out / "solve_trace.csv", solve_trace_rows(res))
        artifacts += ["eval.json", "solve_trace.csv"]
        flags = {"constrained": False, "beta": args.beta}
    _write_manifest(out, args, cfg, artifacts, flags)
    return EXIT_OK


def _simulation_policy(args, model, sim_cfg):
    """Resolve --policy into an actor; returns (actor, metadata dict)."""
    if args.policy == "optimal":
        if args.constrained:
            sol = solve_constrained(ConstrainedSolverConfig(), model)
            return sol.policy, {"kind": sol.kind, "beta_star": sol.beta_star,
                                "xi": sol.xi}
        res = relative_value_iteration(SolverConfig(beta=args.beta), model)
        return res.policy, {"beta": args.beta}
    if args.policy == "mixed":
        if args.xi is not None:
            return make_heuristic(HeuristicKind("mixed", xi=args.xi), model), \
                {"xi": args.xi}
        cal = calibrate_xi(model, sim_cfg)
        meta = {"xi": cal.xi, "g_radical": cal.g_radical,
                "g_conservative": cal.g_conservative,
                "calibration_feasible": cal.feasible}
        return make_heuristic(HeuristicKind("mixed", xi=cal.xi), model), meta
    return make_heuristic(HeuristicKind(args.policy), model), {}


def cmd_simulate(args) -> int:
    model, cfg = _load(args)
    out = _out_dir(args)
    sim_cfg = SimConfig(n_slots=args.n_slots, seed=args.seed,
                        warmup=args.warmup, record_trace=args.trace)
    policy, meta = _simulation_policy(args, model, sim_cfg)
    res = run_simulation(policy, model, sim_cfg)
    summary = sim_result_dict(res)
    summary["policy"] = args.policy
    summary.update(meta)
    write_json(out / "sim.json", summary)
    artifacts = ["sim.json"]
    if args.trace:
        write_csv(out / "sim_trace.csv", sim_trace_rows(res.trace))
        artifacts.append("sim_trace.csv")
    _write_manifest(out, args, cfg, artifacts,
                    {"policy": args.policy, "n_slots": args.n_slots})
    return EXIT_OK


def cmd_sweep(args) -> int:
    model, cfg = _load(args)
    out = _out_dir(args)
    points = [float(p) for p in args.points.split(",") if p.strip()]
    if not points:
        raise ConfigError("--points needs a comma-separated list of numbers")
    sim_cfg = SimConfig(n_slots=args.n_slots, seed=args.seed)
    if args.axis == "arrival":
        rows = sweep_arrival(model, points, args.policy, sim_cfg,
                             n_workers=args.n_workers)
    elif args.axis == "budget":
        rows = sweep_budget(model, points, args.policy, sim_cfg,
                            n_workers=args.n_workers)
    else:
        rows = sweep_channel(model, points,
                             ("radical", "conservative", "mixed"), sim_cfg,
                             n_levels=args.n_levels, n_workers=args.n_workers)
    name = f"sweep_{args.axis}.csv"
    write_csv(out / name, rows)
    _write_manifest(out, args, cfg, [name],
                    {"axis": args.axis, "points": points,
                     "policy": args.policy, "n_slots": args.n_slots})
    return EXIT_OK


def cmd_verify(args) -> int:
    model, cfg = _load(args)
    out = _out_dir(args)
    reports = run_all_checks(model, beta=args.beta, alpha=args.alpha,
                             epsilon=args.epsilon)
    (out / "certificates.json").write_text(reports_to_json(reports))
    table = format_reports(reports)
    (out / "certificates.txt").write_text(table + "\n")
    print(table)
    _write_manifest(out, args, cfg, ["certificates.json", "certificates.txt"],
                    {"beta": args.beta, "alpha": args.alpha})
    return EXIT_CERTIFICATE if any_hard_failure(reports) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="model config JSON")
    shared.add_argument("--out", required=True, help="artifact directory")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (dotted path)")

    parser = argparse.ArgumentParser(
        prog="ehsched",
        description="Solve, simulate and certify grid-assisted "
                    "energy-harvesting transmission schedules.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_solve = sub.add_parser("solve", parents=[shared],
                             help="solve for an optimal policy")
    p_solve.add_argument("--beta", type=float, default=1.0,
                         help="grid-power price (unconstrained solve)")
    p_solve.add_argument("--constrained", action="store_true",
                         help="meet the configured power budget p_bar")
    p_solve.set_defaults(func=cmd_solve)

    p_sim = sub.add_parser("simulate", parents=[shared],
                           help="roll a policy forward under the chains")
    p_sim.add_argument("--policy", default="optimal",
                       choices=("optimal", "radical", "conservative", "mixed"))
    p_sim.add_argument("--beta", type=float, default=1.0)
    p_sim.add_argument("--constrained", action="store_true")
    p_sim.add_argument("--xi", type=float, default=None,
                       help="fixed mixing weight (skip calibration)")
    p_sim.add_argument("--n-slots", type=int, default=100_000)
    p_sim.add_argument("--warmup", type=int, default=None)
    p_sim.add_argument("--trace", action="store_true",
                       help="also write the per-slot trace CSV")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", parents=[shared],
                             help="simulate over a parameter grid")
    p_sweep.add_argument("--axis", required=True,
                         choices=("arrival", "budget", "channel"))
    p_sweep.add_argument("--points", required=True,
                         help="comma-separated sweep values")
    p_sweep.add_argument("--policy", default="radical",
                         choices=("radical", "conservative", "mixed"))
    p_sweep.add_argument("--n-slots", type=int, default=100_000)
    p_sweep.add_argument("--n-levels", type=int, default=8,
                         help="channel quantizer levels (channel axis)")
    p_sweep.add_argument("--n-workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", parents=[shared],
                              help="run the structural certificates")
    p_verify.add_argument("--beta", type=float, default=1.0)
    p_verify.add_argument("--alpha", type=float, default=0.999)
    p_verify.add_argument("--epsilon", type=float, default=1e-9)
    p_verify.set_defaults(func=cmd_verify)
    return parser


def _report_error(args, exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(dump_json(payload))
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "error.json", payload)
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CapacityError, BudgetInfeasibleError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        _report_error(args, exc)
        return EXIT_VALIDATION
    except (NonConvergenceError, ConstrainedSearchError) as exc:
        _report_error(args, exc)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
