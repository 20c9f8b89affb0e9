#!/usr/bin/env python3
"""Queue/grid-power tradeoff on one instance.

Sweeps the power price beta over a log grid, solving each point exactly, then
runs the constrained search at the config's budget and appends the solution.
Writes tradeoff.csv and constrained.json.

Usage: python3 scripts/tradeoff_curve.py [--config configs/desk.json]
           [--out results/tradeoff] [--betas 0.01,0.1,1,10,100]
"""

import argparse
from dataclasses import replace
from pathlib import Path

from ehsched.constrained import ConstrainedSolverConfig, solve_constrained
from ehsched.io import write_csv, write_json
from ehsched.mdp import (SolverConfig, build_action_space, evaluate_policy,
                         relative_value_iteration)
from ehsched.model import load_model

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=REPO / "configs" / "desk.json")
    ap.add_argument("--out", default=REPO / "results" / "tradeoff")
    ap.add_argument("--betas", default="0.01,0.1,1,10,100")
    ap.add_argument("--epsilon", type=float, default=1e-11)
    ap.add_argument("--p-bar", type=float, default=None,
                    help="override the config's power budget")
    args = ap.parse_args()

    model = load_model(args.config)
    if args.p_bar is not None:
        model = replace(model, params=replace(model.params, p_bar=args.p_bar))
    actions = build_action_space(model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for beta in (float(b) for b in args.betas.split(",")):
        sol = relative_value_iteration(
            SolverConfig(beta=beta, epsilon=args.epsilon), model, actions)
        ev = evaluate_policy(sol.policy, beta, model, actions=actions)
        rows.append({"beta": beta, "gain": sol.gain,
                     "mean_queue": ev.mean_queue_b,
                     "mean_grid_power": ev.mean_grid_k,
                     "iterations": sol.n_iters})
        print(f"beta={beta:<8g} J={sol.gain:.6f} B={ev.mean_queue_b:.6f} "
              f"K={ev.mean_grid_k:.6f}")
    write_csv(out / "tradeoff.csv", rows)

    sol = solve_constrained(ConstrainedSolverConfig(), model)
    summary = {"kind": sol.kind, "beta_star": sol.beta_star, "xi": sol.xi,
               "mean_queue": sol.achieved_b, "mean_grid_power": sol.achieved_k,
               "p_bar": model.params.p_bar}
    write_json(out / "constrained.json", summary)
    print(f"constrained: {sol.kind} beta*={sol.beta_star:.6g} "
          f"B={sol.achieved_b:.6f} K={sol.achieved_k:.6f} "
          f"(budget {model.params.p_bar})")
    print(f"wrote {out}/tradeoff.csv and {out}/constrained.json")


if __name__ == "__main__":
    main()
