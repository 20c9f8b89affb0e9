"""Shared instance builders and comparison helpers for the test suite."""

import numpy as np

from ehsched.mdp import evaluate_policy
from ehsched.model import MarkovChainSpec, Model, ModelParams

# --- tiny instances for the enumeration oracle (<= 6 states) ---------------


def power_delay_model(circuit_c=0.1, q_max=2):
    """No battery at all: the classic serve-now-or-wait power/delay tradeoff.

    States: (q in 0..2) x (a in {0,2}) = 6.
    """
    params = ModelParams(q_max=q_max, e_max=0.0, delta_e=1.0, circuit_c=circuit_c)
    return Model(
        params=params,
        channel=MarkovChainSpec.iid((1.0,), (1.0,)),
        arrival=MarkovChainSpec.iid((0.0, 2.0), (0.5, 0.5)),
        harvest=MarkovChainSpec.iid((0.0,), (1.0,)),
    )


def battery_model():
    """Deterministic arrivals and harvest, 3 battery levels: 6 states.

    One packet arrives and 0.5 energy units land every slot; the only choice
    is when to serve and whether to spend the battery.
    """
    params = ModelParams(q_max=1, e_max=1.0, delta_e=0.5, circuit_c=0.5)
    return Model(
        params=params,
        channel=MarkovChainSpec.iid((1.0,), (1.0,)),
        arrival=MarkovChainSpec.iid((1.0,), (1.0,)),
        harvest=MarkovChainSpec.iid((0.5,), (1.0,)),
    )


def channel_model():
    """Persistent two-level fading, one arrival per slot, no battery: 4 states."""
    params = ModelParams(q_max=1, e_max=0.0, delta_e=1.0, circuit_c=0.1)
    return Model(
        params=params,
        channel=MarkovChainSpec((0.5, 2.0), np.array([[0.8, 0.2], [0.3, 0.7]])),
        arrival=MarkovChainSpec.iid((1.0,), (1.0,)),
        harvest=MarkovChainSpec.iid((0.0,), (1.0,)),
    )


def tiny_models():
    return [power_delay_model(), battery_model(), channel_model()]


# --- mid-size instance for fast end-to-end unit tests -----------------------


def desk_lite_model(circuit_c=0.05, p_bar=0.4, restrict=True):
    """120 states: enough structure for solver tests, fast enough for units."""
    params = ModelParams(q_max=4, e_max=1.0, delta_e=0.5, circuit_c=circuit_c,
                         p_bar=p_bar)
    return Model(
        params=params,
        channel=MarkovChainSpec((0.6, 1.4), np.array([[0.7, 0.3], [0.4, 0.6]])),
        arrival=MarkovChainSpec.iid((0.0, 2.0), (0.5, 0.5)),
        harvest=MarkovChainSpec.iid((0.0, 0.5), (0.5, 0.5)),
        restrict_w_to_power=restrict,
    )


def desk_model(circuit_c=0.05, p_bar=0.4, restrict=True):
    """200 states: the workhorse mid-size instance for structural checks.

    Same chains as desk_lite but a finer battery grid (delta_e=0.25). The
    finer grid matters: with delta_e=0.5 a rate-1 transmission (P=0.28) can't
    draw from the battery at all and the value table picks up a quantization
    kink along q that breaks the convexity certificate.
    """
    params = ModelParams(q_max=4, e_max=1.0, delta_e=0.25, circuit_c=circuit_c,
                         p_bar=p_bar)
    return Model(
        params=params,
        channel=MarkovChainSpec((0.6, 1.4), np.array([[0.7, 0.3], [0.4, 0.6]])),
        arrival=MarkovChainSpec.iid((0.0, 2.0), (0.5, 0.5)),
        harvest=MarkovChainSpec.iid((0.0, 0.5), (0.5, 0.5)),
        restrict_w_to_power=restrict,
    )


# --- comparisons ------------------------------------------------------------


def assert_policies_equivalent(pol_a, pol_b, beta, model, actions=None, tol=1e-6):
    """Policies must agree except at states where either action is optimal.

    At every state where the two tables differ, substituting one action into
    the other policy must leave the exact gain unchanged within tol.
    """
    ev_a = evaluate_policy(pol_a, beta, model, actions=actions)
    ev_b = evaluate_policy(pol_b, beta, model, actions=actions)
    assert abs(ev_a.gain_j - ev_b.gain_j) <= tol
    diff = np.flatnonzero((pol_a.r != pol_b.r) | (pol_a.w_quanta != pol_b.w_quanta))
    for s in diff:
        hybrid_r = pol_a.r.copy()
        hybrid_w = pol_a.w_quanta.copy()
        hybrid_r[s] = pol_b.r[s]
        hybrid_w[s] = pol_b.w_quanta[s]
        hybrid = type(pol_a)(r=hybrid_r, w_quanta=hybrid_w,
                             delta_e=pol_a.delta_e, tau=pol_a.tau)
        ev_h = evaluate_policy(hybrid, beta, model, actions=actions)
        assert abs(ev_h.gain_j - ev_a.gain_j) <= tol, (
            f"state {s}: swapping the action changes the gain by "
            f"{ev_h.gain_j - ev_a.gain_j:.3e}")
