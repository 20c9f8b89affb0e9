"""Closed-form baseline policies and the rate-only reduced solve.

Three baselines: radical (serve everything), conservative (cap the rate so the
slot's grid draw stays within the budget), and their per-slot randomization
calibrated so the average grid power meets the budget. All three spend the
battery greedily. The reduced solve optimizes the rate alone with the battery
draw forced greedy, collapsing the two-dimensional action to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import SolveResult, SolverConfig, build_action_space, relative_value_iteration
from .model import (
    Action,
    Model,
    ModelParams,
    SystemState,
    battery_draw_cap_quanta,
    power_inverse,
)

VALID_KINDS = ("radical", "conservative", "mixed")


@dataclass(frozen=True)
class HeuristicKind:
    kind: str
    xi: float | None = None  # probability of playing radical (mixed only)

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"kind must be one of {VALID_KINDS}")
        if self.kind == "mixed":
            if self.xi is None or not 0.0 <= self.xi <= 1.0:
                raise ValueError("mixed policy needs xi in [0, 1]")


def greedy_battery(x: SystemState, r: int, params: ModelParams) -> float:
    """Largest grid-valued battery draw: floor of min(e_b/tau, P(x,r))."""
    ib = int(round(x.e_b / params.delta_e))
    wq = battery_draw_cap_quanta(params, x.h, r, ib, restrict=True)
    return wq * params.delta_e / params.tau


def radical_policy(x: SystemState, params: ModelParams) -> Action:
    """Serve the whole buffer, battery first."""
    return Action(x.q, greedy_battery(x, x.q, params))


def conservative_policy(x: SystemState, params: ModelParams) -> Action:
    """Largest rate whose grid draw stays within the slot budget p_bar.

    The battery is spent greedily, so the grid pays at most p_bar plus one
    w-grid quantum (the flooring residue).
    """
    r = min(x.q, power_inverse(params, x.h, params.p_bar + x.e_b / params.tau))
    return Action(r, greedy_battery(x, r, params))


def mixed_action(x: SystemState, params: ModelParams, xi: float, u: float) -> Action:
    """Radical when the uniform draw u falls below xi, else conservative."""
    if u < xi:
        return radical_policy(x, params)
    return conservative_policy(x, params)


def mixed_policy(x: SystemState, params: ModelParams, xi: float, rng) -> Action:
    return mixed_action(x, params, xi, float(rng.random()))


@dataclass(frozen=True)
class MixedHeuristic:
    """Per-slot randomization between radical and conservative.

    The simulator feeds act() one uniform coin per slot from its own stream.
    """

    params: ModelParams
    xi: float

    def act(self, x: SystemState, coin: float) -> Action:
        return mixed_action(x, self.params, self.xi, coin)


def mixing_weight(g_radical: float, g_conservative: float, p_bar: float) -> float:
    """Weight xi solving xi*G_r + (1-xi)*G_c = p_bar, clipped to [0, 1]."""
    if g_radical <= p_bar:
        return 1.0
    if abs(g_radical - g_conservative) < 1e-12:
        return 0.0
    return float(np.clip((p_bar - g_conservative) / (g_radical - g_conservative),
                         0.0, 1.0))


@dataclass
class CalibrationResult:
    xi: float
    g_radical: float
    g_conservative: float
    feasible: bool  # False when even the conservative baseline overshoots p_bar


def calibrate_xi(model: Model, sim_cfg, p_bar: float | None = None) -> CalibrationResult:
    """Measure G_r and G_c by simulation (same seed, common random numbers)
    and interpolate the mixing weight."""
    from .sim import run_simulation  # sim imports nothing from here; lazy to keep layering flat

    if p_bar is None:
        p_bar = model.params.p_bar
    params = model.params
    res_r = run_simulation(lambda x: radical_policy(x, params), model, sim_cfg)
    res_c = run_simulation(lambda x: conservative_policy(x, params), model, sim_cfg)
    g_r, g_c = res_r.mean_grid_power, res_c.mean_grid_power
    xi = mixing_weight(g_r, g_c, p_bar)
    return CalibrationResult(xi=xi, g_radical=g_r, g_conservative=g_c,
                             feasible=min(g_r, g_c) <= p_bar)


def make_heuristic(kind: HeuristicKind, model: Model):
    """Actor for run_simulation: a plain callable, or MixedHeuristic for mixed."""
    params = model.params
    if kind.kind == "radical":
        return lambda x: radical_policy(x, params)
    if kind.kind == "conservative":
        return lambda x: conservative_policy(x, params)
    return MixedHeuristic(params=params, xi=kind.xi)


def solve_reduced_rate_mdp(beta: float, model: Model, epsilon: float = 1e-9,
                           max_iters: int = 1_000_000) -> SolveResult:
    """Average-cost solve over the rate alone, battery draw forced greedy.

    Returns the usual SolveResult; its policy is a full (r, w) table with
    w = greedy_battery(x, r*(x)).
    """
    space = model.space
    params = model.params

    def greedy_draws(s, r):
        h = float(space.h_values[space.ih[s]])
        ib = int(space.ib[s])
        return (battery_draw_cap_quanta(params, h, r, ib, restrict=True),)

    actions = build_action_space(model, draws_of=greedy_draws)
    cfg = SolverConfig(beta=beta, epsilon=epsilon, max_iters=max_iters)
    return relative_value_iteration(cfg, model, actions=actions)
