"""Physical model of the energy-harvesting transmitter link.

A slot-level model of a point-to-point link: packets arrive into a finite
buffer, a Markov fading channel sets the energy price of transmission, and the
transmitter pays for each slot's transmit power from a finite battery (fed by
a Markov harvest process) plus, for the remainder, from the power grid.

Everything downstream (solvers, certificates, simulator) works on the state
tuple ``(q, h, a, e_b, e)`` -- queue length, channel gain, current arrival,
battery charge, current harvest -- and the action ``(r, w)`` -- packets served
and battery draw (power) this slot.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

GRID_EPS = 1e-9  # absolute guard used when snapping continuous values to grids


class ConfigError(ValueError):
    """Invalid model configuration (bad field, bad chain row, off-grid value)."""


class CapacityError(RuntimeError):
    """State-space enumeration would exceed the configured limit."""


class SystemState(NamedTuple):
    q: int      # queue length, packets
    h: float    # channel power gain
    a: int      # arrivals landing this slot, packets
    e_b: float  # battery charge, energy units
    e: float    # harvest landing in the battery this slot, energy units


class Action(NamedTuple):
    r: int      # packets transmitted this slot
    w: float    # battery power drawn this slot (energy w * tau leaves the battery)


@dataclass(frozen=True)
class ModelParams:
    """Scalar link parameters.

    tau       slot length (seconds)
    b         bandwidth-equivalent rate constant in the power law exponent
    n_uses    channel uses per slot in the power law exponent
    rho       power amplifier inefficiency (>= 1)
    sigma2    receiver noise power
    circuit_c constant circuitry power added whenever r > 0
    q_max     buffer size, packets
    e_max     battery capacity, energy units
    delta_e   battery energy quantum; e_b, harvest values and w*tau live on
              this grid
    p_bar     long-run average grid-power budget (used by the constrained
              solver and the conservative heuristic)
    """

    tau: float = 1.0
    b: float = 1.0
    n_uses: float = 5.0
    rho: float = 1.0
    sigma2: float = 1.0
    circuit_c: float = 0.0
    q_max: int = 10
    e_max: float = 0.0
    delta_e: float = 1.0
    p_bar: float = 0.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.b <= 0 or self.n_uses <= 0:
            raise ConfigError("b and n_uses must be positive")
        if self.rho < 1.0:
            raise ConfigError("rho must be >= 1")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.circuit_c < 0:
            raise ConfigError("circuit_c must be >= 0")
        if int(self.q_max) != self.q_max or self.q_max < 0:
            raise ConfigError("q_max must be a nonnegative integer")
        if self.delta_e <= 0:
            raise ConfigError("delta_e must be positive")
        if self.e_max < 0:
            raise ConfigError("e_max must be >= 0")
        if abs(self.e_max / self.delta_e - round(self.e_max / self.delta_e)) > GRID_EPS:
            raise ConfigError("e_max must be an integer multiple of delta_e")
        if self.p_bar < 0:
            raise ConfigError("p_bar must be >= 0")

    @property
    def theta(self) -> float:
        """Exponent of the power-rate law: 2 ln2 * b / n_uses."""
        return 2.0 * math.log(2.0) * self.b / self.n_uses

    @property
    def n_battery_levels(self) -> int:
        return int(round(self.e_max / self.delta_e)) + 1


def _as_prob_matrix(transition, n: int) -> np.ndarray:
    t = np.asarray(transition, dtype=float)
    if t.shape != (n, n):
        raise ConfigError(f"transition matrix must be {n}x{n}, got {t.shape}")
    if np.any(t < -GRID_EPS):
        raise ConfigError("transition probabilities must be nonnegative")
    rowsums = t.sum(axis=1)
    bad = np.where(np.abs(rowsums - 1.0) > 1e-9)[0]
    if bad.size:
        raise ConfigError(f"transition row {bad[0]} sums to {float(rowsums[bad[0]])!r}, expected 1")
    return np.clip(t, 0.0, None)


@dataclass(frozen=True)
class MarkovChainSpec:
    """A finite-state Markov chain given by its levels and transition matrix."""

    values: tuple
    transition: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ConfigError("chain needs at least one level")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("chain levels must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "transition", _as_prob_matrix(self.transition, len(values)))

    @classmethod
    def iid(cls, values, probs) -> "MarkovChainSpec":
        p = np.asarray(probs, dtype=float)
        if p.shape != (len(values),):
            raise ConfigError("iid chain needs one probability per level")
        return cls(tuple(values), np.tile(p, (len(values), 1)))

    @property
    def n(self) -> int:
        return len(self.values)

    def stationary(self) -> np.ndarray:
        """Stationary law of the chain (unique for the irreducible chains we use)."""
        n = self.n
        if n == 1:
            return np.ones(1)
        a = np.vstack([self.transition.T - np.eye(n), np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    def mean(self) -> float:
        return float(np.dot(self.stationary(), self.values))


def required_power(params: ModelParams, h: float, r: int) -> float:
    """Transmit power needed to move r packets in one slot over gain h.

    Exponential in r (Shannon-style inversion) plus constant circuitry power
    whenever the radio is on; zero exactly at r = 0.
    """
    if h <= 0:
        raise ValueError("channel gain must be positive")
    if r < 0:
        raise ValueError("rate must be nonnegative")
    if r == 0:
        return 0.0
    return params.rho * (params.sigma2 / h) * math.expm1(params.theta * r) + params.circuit_c


def power_inverse(params: ModelParams, h: float, budget: float) -> int:
    """Largest integer rate whose required power fits within `budget`.

    Always >= 0; r = 0 when even one packet costs more than the budget.
    """
    if h <= 0:
        raise ValueError("channel gain must be positive")
    if budget < required_power(params, h, 1) - GRID_EPS:
        return 0
    # closed form, then a local float-safety correction
    x = (budget - params.circuit_c) * h / (params.rho * params.sigma2)
    r = int(math.floor(math.log1p(max(x, 0.0)) / params.theta + GRID_EPS))
    r = max(r, 1)
    while required_power(params, h, r + 1) <= budget + GRID_EPS:
        r += 1
    while r > 1 and required_power(params, h, r) > budget + GRID_EPS:
        r -= 1
    return r


def grid_power(params: ModelParams, x: SystemState, r: int, w: float) -> float:
    """Power bought from the grid this slot: (required - battery draw)+."""
    if r < 0 or r > x.q:
        raise ValueError(f"rate {r} infeasible at queue {x.q}")
    if w < -GRID_EPS or w * params.tau > x.e_b + GRID_EPS:
        raise ValueError(f"battery draw {w} infeasible at charge {x.e_b}")
    return max(required_power(params, x.h, r) - w, 0.0)


def step_queue(q: int, r: int, a: int, q_max: int) -> tuple[int, int]:
    """Next queue and the packets lost to the buffer clamp."""
    if r < 0 or r > q:
        raise ValueError(f"rate {r} infeasible at queue {q}")
    raw = q - r + a
    nxt = min(raw, q_max)
    return nxt, raw - nxt


def step_battery(e_b: float, w: float, e: float, params: ModelParams) -> tuple[float, float]:
    """Next battery charge and the harvest energy lost to the capacity clamp."""
    if w * params.tau > e_b + GRID_EPS:
        raise ValueError(f"battery draw {w} infeasible at charge {e_b}")
    raw = e_b - w * params.tau + e
    nxt = min(raw, params.e_max)
    return nxt, raw - nxt


class StateSpace:
    """Flat enumeration of (q, h, a, e_b, e) with mixed-radix index arithmetic.

    Index layout: q is the slowest coordinate, then h, a, e_b (as quanta of
    delta_e), and e fastest.
    """

    def __init__(self, params: ModelParams, channel: MarkovChainSpec,
                 arrival: MarkovChainSpec, harvest: MarkovChainSpec,
                 max_states: int = 2_000_000):
        self.params = params
        self.channel = channel
        self.arrival = arrival
        self.harvest = harvest

        self.nq = params.q_max + 1
        self.nh = channel.n
        self.na = arrival.n
        self.nb = params.n_battery_levels
        self.ne = harvest.n
        n = self.nq * self.nh * self.na * self.nb * self.ne
        if n > max_states:
            raise CapacityError(f"{n} states exceeds limit {max_states}")
        self.n_states = n

        self.h_values = np.asarray(channel.values)
        self.arrival_pkts = np.array([int(round(v)) for v in arrival.values])
        self.harvest_quanta = np.array(
            [int(round(v / params.delta_e)) for v in harvest.values])

        # strides for index_of / state_of
        self.s_q = self.nh * self.na * self.nb * self.ne
        self.s_h = self.na * self.nb * self.ne
        self.s_a = self.nb * self.ne
        self.s_b = self.ne

        idx = np.arange(n)
        self.iq = idx // self.s_q
        rem = idx % self.s_q
        self.ih = rem // self.s_h
        rem = rem % self.s_h
        self.ia = rem // self.s_a
        rem = rem % self.s_a
        self.ib = rem // self.s_b
        self.ie = rem % self.s_b

    def index_of(self, x: SystemState) -> int:
        iq = int(x.q)
        if not 0 <= iq < self.nq:
            raise ValueError(f"queue {x.q} outside [0, {self.nq - 1}]")
        ih = int(np.argmin(np.abs(self.h_values - x.h)))
        if abs(self.h_values[ih] - x.h) > 1e-9:
            raise ValueError(f"channel gain {x.h} is not a chain level")
        ia = int(np.argmin(np.abs(self.arrival_pkts - x.a)))
        if self.arrival_pkts[ia] != x.a:
            raise ValueError(f"arrival {x.a} is not a chain level")
        ib = int(round(x.e_b / self.params.delta_e))
        if not 0 <= ib < self.nb or abs(ib * self.params.delta_e - x.e_b) > GRID_EPS:
            raise ValueError(f"battery charge {x.e_b} is off-grid")
        ev = np.asarray(self.harvest.values)
        ie = int(np.argmin(np.abs(ev - x.e)))
        if abs(ev[ie] - x.e) > 1e-9:
            raise ValueError(f"harvest {x.e} is not a chain level")
        return ((iq * self.nh + ih) * self.na + ia) * self.nb * self.ne + ib * self.ne + ie

    def state_of(self, i: int) -> SystemState:
        if not 0 <= i < self.n_states:
            raise IndexError(i)
        return SystemState(
            q=int(self.iq[i]),
            h=float(self.h_values[self.ih[i]]),
            a=int(self.arrival_pkts[self.ia[i]]),
            e_b=float(self.ib[i] * self.params.delta_e),
            e=float(np.asarray(self.harvest.values)[self.ie[i]]),
        )


def enumerate_states(params: ModelParams, channel: MarkovChainSpec,
                     arrival: MarkovChainSpec, harvest: MarkovChainSpec,
                     max_states: int = 2_000_000) -> StateSpace:
    return StateSpace(params, channel, arrival, harvest, max_states=max_states)


@dataclass(frozen=True)
class Model:
    """Parameters plus the three exogenous chains, with cross-field validation.

    restrict_w_to_power: when True (default), battery draw is capped at the
    required power of the chosen rate, so the battery never pushes grid power
    below zero (the regime all the structural results assume). When False the
    only caps on w are the battery charge and the grid step.
    """

    params: ModelParams
    channel: MarkovChainSpec
    arrival: MarkovChainSpec
    harvest: MarkovChainSpec
    restrict_w_to_power: bool = True

    def __post_init__(self):
        if any(v <= 0 for v in self.channel.values):
            raise ConfigError("channel gains must be positive")
        for v in self.arrival.values:
            if abs(v - round(v)) > 1e-9 or v < 0:
                raise ConfigError(f"arrival level {v} must be a nonnegative integer")
        if max(self.arrival.values) > self.params.q_max:
            raise ConfigError("q_max must be at least the largest arrival burst")
        for v in self.harvest.values:
            if v < -GRID_EPS:
                raise ConfigError(f"harvest level {v} must be nonnegative")
            if abs(v / self.params.delta_e - round(v / self.params.delta_e)) > GRID_EPS:
                raise ConfigError(f"harvest level {v} must sit on the delta_e grid")
        if max(self.harvest.values) > self.params.e_max + GRID_EPS and self.params.e_max > 0:
            # harvest bursts above capacity are fine (they clamp), just unusual
            pass

    @cached_property
    def space(self) -> StateSpace:
        return enumerate_states(self.params, self.channel, self.arrival, self.harvest)

    def mean_arrival(self) -> float:
        return self.arrival.mean()

    def mean_harvest(self) -> float:
        return self.harvest.mean()


def battery_draw_cap_quanta(params: ModelParams, h: float, r: int, ib: int,
                            restrict: bool = True) -> int:
    """Largest battery draw, in energy quanta per slot, feasible at (h, r, ib)."""
    cap = ib
    if restrict:
        p = required_power(params, h, r)
        cap = min(cap, int(math.floor(p * params.tau / params.delta_e + GRID_EPS)))
    return max(cap, 0)


def feasible_actions(x: SystemState, params: ModelParams,
                     restrict_w_to_power: bool = True) -> list[Action]:
    """All feasible (r, w) at state x; w on the delta_e/tau grid.

    r runs over 0..q; w over multiples of delta_e/tau up to the battery charge
    and (by default) the required power of the chosen rate. (0, 0) is always
    present.
    """
    ib = int(round(x.e_b / params.delta_e))
    acts = []
    for r in range(int(x.q) + 1):
        cap = battery_draw_cap_quanta(params, x.h, r, ib, restrict_w_to_power)
        for k in range(cap + 1):
            acts.append(Action(r, k * params.delta_e / params.tau))
    return acts


# ---------------------------------------------------------------------------
# configuration loading

def _chain_from_config(cfg: dict, name: str) -> MarkovChainSpec:
    try:
        values = cfg["values"]
    except KeyError:
        raise ConfigError(f"{name}: missing 'values'") from None
    try:
        if "probs" in cfg:
            return MarkovChainSpec.iid(values, cfg["probs"])
        return MarkovChainSpec(tuple(values), np.asarray(cfg["transition"], dtype=float))
    except KeyError:
        raise ConfigError(f"{name}: needs either 'probs' or 'transition'") from None
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from None


_PARAM_FIELDS = {f for f in ModelParams.__dataclass_fields__}


def load_model(source) -> Model:
    """Build a Model from a dict or a JSON file path.

    Expected shape::

        {"params": {"tau": 1.0, "q_max": 8, ...},
         "channel": {"values": [...], "transition": [[...], ...]},
         "arrival": {"values": [...], "probs": [...]},
         "harvest": {"values": [...], "probs": [...]},
         "restrict_w_to_power": true}
    """
    if isinstance(source, (str, os.PathLike)) or hasattr(source, "read"):
        if hasattr(source, "read"):
            cfg = json.load(source)
        else:
            with open(source) as fh:
                cfg = json.load(fh)
    elif isinstance(source, dict):
        cfg = source
    else:
        raise ConfigError(f"cannot load a model from {type(source).__name__}")

    if "params" not in cfg:
        raise ConfigError("missing 'params' section")
    unknown = set(cfg["params"]) - _PARAM_FIELDS
    if unknown:
        raise ConfigError(f"params: unknown field(s) {sorted(unknown)}")
    try:
        params = ModelParams(**cfg["params"])
    except TypeError as exc:
        raise ConfigError(f"params: {exc}") from None

    chains = {}
    for name in ("channel", "arrival", "harvest"):
        if name not in cfg:
            raise ConfigError(f"missing '{name}' section")
        chains[name] = _chain_from_config(cfg[name], name)

    return Model(params=params, restrict_w_to_power=bool(cfg.get("restrict_w_to_power", True)),
                 **chains)


def model_to_config(model: Model) -> dict:
    """Inverse of load_model, for manifests and round-tripping."""
    def chain_cfg(c: MarkovChainSpec) -> dict:
        return {"values": list(c.values), "transition": c.transition.tolist()}

    p = model.params
    return {
        "params": {name: getattr(p, name) for name in _PARAM_FIELDS},
        "channel": chain_cfg(model.channel),
        "arrival": chain_cfg(model.arrival),
        "harvest": chain_cfg(model.harvest),
        "restrict_w_to_power": model.restrict_w_to_power,
    }
