"""Average-cost and discounted MDP machinery over the link model.

The decision problem: per slot, pay q + beta * grid_power. The solver works on
a flattened state-action enumeration with a sparse one-step kernel; relative
value iteration gives the long-run-average optimum, discounted value iteration
supports the vanishing-discount route, and evaluate_policy computes exact
stationary averages for any fixed (or two-policy mixed) stationary policy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .model import Action, Model, SystemState, battery_draw_cap_quanta, required_power


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class MultichainError(RuntimeError):
    """The policy's chain has more than one recurrent class; long-run averages
    would depend on the initial state."""


class InstanceTooLargeError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the value-iteration solvers.

    kappa is the damping weight of the averaged Bellman operator
    (1-kappa)*I + kappa*T used by relative VI; it removes periodicity without
    changing the gain or the greedy policy.
    """

    beta: float
    epsilon: float = 1e-9
    max_iters: int = 1_000_000
    reference_state: int = 0
    alpha: float | None = None
    kappa: float = 0.5

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("kappa must be in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class ValueTable:
    values: np.ndarray
    kind: str  # "relative-bias" | "discounted"
    beta: float
    alpha: float | None = None
    reference_state: int | None = None


@dataclass
class TablePolicy:
    """Deterministic stationary policy stored as per-state (r, w-quanta)."""

    r: np.ndarray
    w_quanta: np.ndarray
    delta_e: float
    tau: float

    @property
    def w(self) -> np.ndarray:
        return self.w_quanta * (self.delta_e / self.tau)

    def action(self, i: int) -> Action:
        return Action(int(self.r[i]), float(self.w_quanta[i]) * self.delta_e / self.tau)

    @classmethod
    def from_callable(cls, fn, model: Model) -> "TablePolicy":
        space = model.space
        n = space.n_states
        r = np.zeros(n, dtype=np.int64)
        wq = np.zeros(n, dtype=np.int64)
        de, tau = model.params.delta_e, model.params.tau
        for i in range(n):
            act = fn(space.state_of(i))
            r[i] = int(act.r)
            wq[i] = int(round(act.w * tau / de))
        return cls(r=r, w_quanta=wq, delta_e=de, tau=tau)

    def __eq__(self, other):
        if not isinstance(other, TablePolicy):
            return NotImplemented
        return (np.array_equal(self.r, other.r)
                and np.array_equal(self.w_quanta, other.w_quanta))


@dataclass
class MixedPolicy:
    """Two-policy randomization: at every decision epoch play policy_plus with
    probability xi, else policy_minus (the coin is i.i.d. across slots)."""

    policy_plus: TablePolicy
    policy_minus: TablePolicy
    xi: float

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must be in [0, 1]")


@dataclass
class PolicyEvaluation:
    gain_j: float
    mean_queue_b: float
    mean_grid_k: float
    stationary_dist: np.ndarray
    beta: float
    overflow_rate: float = 0.0       # mean packets lost to the buffer clamp per slot
    battery_spill_rate: float = 0.0  # mean energy lost to the capacity clamp per slot


# ---------------------------------------------------------------------------
# state-action enumeration + kernel


class ActionSpace:
    """Flat enumeration of feasible state-action pairs with the one-step kernel.

    Row layout: actions of state s occupy rows indptr[s]:indptr[s+1], ordered
    by (r, w) ascending, so the first minimizer in a segment is the
    lexicographically smallest action.
    """

    def __init__(self, model: Model, rates_of=None, draws_of=None):
        space = model.space
        params = model.params
        self.model = model
        n = space.n_states

        hq = space.harvest_quanta
        nb = space.nb

        # chain part of the successor distribution, one block per (ih, ia, ie)
        ch_t = model.channel.transition
        ar_t = model.arrival.transition
        ha_t = model.harvest.transition
        blocks_cols = {}
        blocks_probs = {}
        for ih in range(space.nh):
            for ia in range(space.na):
                for ie in range(space.ne):
                    probs = (ch_t[ih][:, None, None]
                             * ar_t[ia][None, :, None]
                             * ha_t[ie][None, None, :]).ravel()
                    cols = (np.arange(space.nh)[:, None, None] * space.s_h
                            + np.arange(space.na)[None, :, None] * space.s_a
                            + np.arange(space.ne)[None, None, :]).ravel()
                    keep = probs > 0.0
                    blocks_cols[ih, ia, ie] = cols[keep]
                    blocks_probs[ih, ia, ie] = probs[keep]

        indptr = np.zeros(n + 1, dtype=np.int64)
        r_list, wq_list, owner = [], [], []
        kcols, kprobs, kptr = [], [], [0]
        nnz = 0
        for s in range(n):
            iq, ih, ia = int(space.iq[s]), int(space.ih[s]), int(space.ia[s])
            ib, ie = int(space.ib[s]), int(space.ie[s])
            h = float(space.h_values[ih])
            a_pkts = int(space.arrival_pkts[ia])
            e_quanta = int(hq[ie])
            bcols = blocks_cols[ih, ia, ie]
            bprobs = blocks_probs[ih, ia, ie]

            rates = range(iq + 1) if rates_of is None else rates_of(s)
            count = 0
            for r in rates:
                if draws_of is None:
                    cap = battery_draw_cap_quanta(params, h, r, ib,
                                                  model.restrict_w_to_power)
                    draws = range(cap + 1)
                else:
                    draws = draws_of(s, r)
                iq_next = min(iq - r + a_pkts, space.nq - 1)
                for wq in draws:
                    ib_next = min(ib - wq + e_quanta, nb - 1)
                    r_list.append(r)
                    wq_list.append(wq)
                    owner.append(s)
                    kcols.append(iq_next * space.s_q + ib_next * space.s_b + bcols)
                    kprobs.append(bprobs)
                    nnz += bcols.size
                    kptr.append(nnz)
                    count += 1
            if count == 0:
                raise ValueError(f"state {s} has no feasible action")
            indptr[s + 1] = indptr[s] + count

        self.indptr = indptr
        self.n_sa = int(indptr[-1])
        self.state_of_sa = np.asarray(owner, dtype=np.int64)
        self.r_sa = np.asarray(r_list, dtype=np.int64)
        self.wq_sa = np.asarray(wq_list, dtype=np.int64)
        self.kernel = sp.csr_matrix(
            (np.concatenate(kprobs), np.concatenate(kcols), np.asarray(kptr)),
            shape=(self.n_sa, n))
        self.kernel.sum_duplicates()

        w = self.wq_sa * (params.delta_e / params.tau)
        p_req = np.array([required_power(params, space.h_values[h_i], r_i)
                          for h_i, r_i in zip(space.ih[self.state_of_sa], self.r_sa)])
        self.grid_sa = np.maximum(p_req - w, 0.0)
        self.queue_sa = space.iq[self.state_of_sa].astype(float)
        # per-slot clamp losses, used for evaluation diagnostics
        raw_q = (space.iq[self.state_of_sa] - self.r_sa
                 + space.arrival_pkts[space.ia[self.state_of_sa]])
        self.overflow_sa = np.maximum(raw_q - (space.nq - 1), 0).astype(float)
        raw_b = (space.ib[self.state_of_sa] - self.wq_sa
                 + hq[space.ie[self.state_of_sa]])
        self.spill_sa = np.maximum(raw_b - (nb - 1), 0).astype(float) * params.delta_e

    def cost(self, beta: float) -> np.ndarray:
        return self.queue_sa + beta * self.grid_sa

    def sa_of_policy(self, policy: TablePolicy) -> np.ndarray:
        """Row index of each state's stored action; raises if one is infeasible."""
        n = self.indptr.size - 1
        out = np.empty(n, dtype=np.int64)
        for s in range(n):
            lo, hi = self.indptr[s], self.indptr[s + 1]
            hit = np.flatnonzero((self.r_sa[lo:hi] == policy.r[s])
                                 & (self.wq_sa[lo:hi] == policy.w_quanta[s]))
            if hit.size == 0:
                raise ValueError(
                    f"policy action (r={policy.r[s]}, wq={policy.w_quanta[s]}) "
                    f"infeasible at state {s}")
            out[s] = lo + hit[0]
        return out

    def policy_from_sa(self, sa: np.ndarray) -> TablePolicy:
        return TablePolicy(r=self.r_sa[sa].copy(), w_quanta=self.wq_sa[sa].copy(),
                           delta_e=self.model.params.delta_e, tau=self.model.params.tau)


def build_action_space(model: Model, rates_of=None, draws_of=None) -> ActionSpace:
    return ActionSpace(model, rates_of=rates_of, draws_of=draws_of)


def transition_kernel(x: SystemState, act: Action, model: Model):
    """One-step successor distribution of a single (state, action) pair.

    Returns (state_indices, probabilities). Kept independent of the bulk
    ActionSpace kernel builder so the two can cross-check each other.
    """
    from .model import feasible_actions, step_battery, step_queue

    params = model.params
    space = model.space
    wq = int(round(act.w * params.tau / params.delta_e))
    if abs(act.w - wq * params.delta_e / params.tau) > 1e-9:
        raise ValueError(f"battery draw {act.w} is off the w-grid")
    if Action(act.r, wq * params.delta_e / params.tau) not in feasible_actions(
            x, params, model.restrict_w_to_power):
        raise ValueError(f"action {act} infeasible in state {x}")

    q_next, _ = step_queue(x.q, act.r, x.a, params.q_max)
    eb_next, _ = step_battery(x.e_b, act.w, x.e, params)

    ih = int(np.argmin(np.abs(space.h_values - x.h)))
    ia = int(np.argmin(np.abs(space.arrival_pkts - x.a)))
    ie = int(np.argmin(np.abs(np.asarray(model.harvest.values) - x.e)))

    idx, probs = [], []
    for ih2, ph in enumerate(model.channel.transition[ih]):
        for ia2, pa in enumerate(model.arrival.transition[ia]):
            for ie2, pe in enumerate(model.harvest.transition[ie]):
                p = ph * pa * pe
                if p <= 0.0:
                    continue
                nxt = SystemState(q=q_next, h=float(space.h_values[ih2]),
                                  a=int(space.arrival_pkts[ia2]), e_b=eb_next,
                                  e=float(np.asarray(model.harvest.values)[ie2]))
                idx.append(space.index_of(nxt))
                probs.append(p)
    order = np.argsort(idx)
    return np.asarray(idx, dtype=np.int64)[order], np.asarray(probs)[order]


# ---------------------------------------------------------------------------
# solvers


def _segment_min(y: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    return np.minimum.reduceat(y, indptr[:-1])


# Tied backup values are common, not a corner case: whenever the marginal
# value of a stored quantum equals its grid replacement price, every feasible
# draw level is exactly optimal.  Exact argmin would let residual noise pick
# an arbitrary member of the tied set, so extraction takes the smallest
# (r, w) pair within a small window of the minimum instead.  The window must
# sit above the value-table error (order epsilon) but below any price gap
# the caller cares about; solvers pass 10x their stopping epsilon.
GREEDY_TIE_TOL = 1e-8


def _greedy_sa(y: np.ndarray, mins: np.ndarray, actions: ActionSpace,
               tie_tol: float = GREEDY_TIE_TOL) -> np.ndarray:
    tol = tie_tol + 1e-12 * np.abs(mins)
    n = actions.indptr.size - 1
    mask = y <= np.repeat(mins + tol, np.diff(actions.indptr))
    best = np.full(n, actions.n_sa, dtype=np.int64)
    hits = np.flatnonzero(mask)
    np.minimum.at(best, actions.state_of_sa[hits], hits)
    return best


@dataclass
class SolveResult:
    gain: float
    values: ValueTable
    policy: TablePolicy
    n_iters: int
    residual: float
    gain_bounds: tuple[float, float] | None = None
    trace: list = field(default_factory=list)


def relative_value_iteration(cfg: SolverConfig, model: Model,
                             actions: ActionSpace | None = None) -> SolveResult:
    """Long-run average-cost solve; returns gain, bias values and greedy policy.

    Runs value iteration on the damped operator (1-kappa) V + kappa T V with
    span-seminorm stopping: the span of T V - V brackets the optimal gain, and
    normalizing at the reference state each sweep keeps the iterates bounded.
    """
    if actions is None:
        actions = build_action_space(model)
    n = model.space.n_states
    ref = cfg.reference_state
    if not 0 <= ref < n:
        raise ValueError(f"reference_state {ref} out of range")
    kappa = cfg.kappa
    c = actions.cost(cfg.beta)
    K = actions.kernel
    owner = actions.state_of_sa

    v = np.zeros(n)
    trace = []
    span = np.inf
    for it in range(1, cfg.max_iters + 1):
        y = c + kappa * (K @ v) + (1.0 - kappa) * v[owner]
        mins = _segment_min(y, actions.indptr)
        d = mins - v
        lo, hi = float(d.min()), float(d.max())
        span = hi - lo
        trace.append((it, span, lo, hi))
        v = mins - mins[ref]
        if span < cfg.epsilon:
            break
    else:
        raise NonConvergenceError(
            f"relative VI did not reach span {cfg.epsilon} in {cfg.max_iters} "
            f"iterations (final span {span:.3e})", residual=span)

    y = c + kappa * (K @ v) + (1.0 - kappa) * v[owner]
    mins = _segment_min(y, actions.indptr)
    sa = _greedy_sa(y, mins, actions, tie_tol=10.0 * cfg.epsilon)
    d = mins - v
    lo, hi = float(d.min()), float(d.max())
    gain = 0.5 * (lo + hi)
    # v solves the optimality equation of the lazy kernel (1-kappa)I + kappa*P,
    # whose gain and greedy sets match the original chain's; its bias is the
    # original bias divided by kappa, so rescale before reporting
    bias = ValueTable(values=kappa * (v - v[ref]), kind="relative-bias",
                      beta=cfg.beta, reference_state=ref)
    return SolveResult(gain=float(gain), values=bias,
                       policy=actions.policy_from_sa(sa), n_iters=it,
                       residual=span, gain_bounds=(lo, hi), trace=trace)


def discounted_backup(actions: ActionSpace, values: np.ndarray, beta: float,
                      alpha: float,
                      tie_tol: float = GREEDY_TIE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """One discounted Bellman sweep; returns (new values, greedy sa rows)."""
    y = actions.cost(beta) + alpha * (actions.kernel @ values)
    mins = _segment_min(y, actions.indptr)
    return mins, _greedy_sa(y, mins, actions, tie_tol=tie_tol)


def discounted_value_iteration(cfg: SolverConfig, model: Model,
                               actions: ActionSpace | None = None) -> SolveResult:
    """Discounted solve from V=0 with the standard contraction stopping rule:
    sup-norm residual below epsilon*(1-alpha)/(2*alpha)."""
    if cfg.alpha is None:
        raise ValueError("discounted mode requires alpha")
    if actions is None:
        actions = build_action_space(model)
    alpha = cfg.alpha
    n = model.space.n_states
    threshold = cfg.epsilon * (1.0 - alpha) / (2.0 * alpha)

    v = np.zeros(n)
    resid = np.inf
    trace = []
    for it in range(1, cfg.max_iters + 1):
        mins, _ = discounted_backup(actions, v, cfg.beta, alpha)
        resid = float(np.max(np.abs(mins - v)))
        trace.append((it, resid))
        v = mins
        if resid < threshold:
            break
    else:
        raise NonConvergenceError(
            f"discounted VI did not reach residual {threshold:.3e} in "
            f"{cfg.max_iters} iterations (final {resid:.3e})", residual=resid)

    _, sa = discounted_backup(actions, v, cfg.beta, alpha,
                              tie_tol=10.0 * cfg.epsilon)
    table = ValueTable(values=v, kind="discounted", beta=cfg.beta, alpha=alpha)
    return SolveResult(gain=float("nan"), values=table,
                       policy=actions.policy_from_sa(sa), n_iters=it,
                       residual=resid, trace=trace)


# ---------------------------------------------------------------------------
# exact policy evaluation


def _stationary_distribution(P: sp.csr_matrix, dense_cap: int = 20_000) -> np.ndarray:
    n = P.shape[0]
    if n <= dense_cap:
        A = P.toarray().T - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
    else:
        pi = np.full(n, 1.0 / n)
        for _ in range(200_000):
            nxt = pi @ P
            if np.max(np.abs(nxt - pi)) < 1e-14:
                pi = nxt
                break
            pi = nxt
    pi = np.where(pi < 0, 0.0, pi)
    pi = pi / pi.sum()
    resid = np.max(np.abs(pi @ P - pi))
    if resid > 1e-10:
        raise NonConvergenceError(f"stationary solve residual {resid:.3e}",
                                  residual=resid)
    return pi


def _assert_unichain(P: sp.csr_matrix):
    adj = P.copy()
    adj.eliminate_zeros()
    adj.data = np.ones_like(adj.data, dtype=np.int8)
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    # a recurrent class is a strongly connected component with no edge leaving it
    coo = adj.tocoo()
    leaves = np.zeros(n_comp, dtype=bool)
    cross = labels[coo.row] != labels[coo.col]
    np.logical_or.at(leaves, labels[coo.row[cross]], True)
    n_recurrent = int(n_comp - np.count_nonzero(leaves))
    if n_recurrent != 1:
        raise MultichainError(
            f"induced chain has {n_recurrent} recurrent classes")


def _recurrent_class_count(P: np.ndarray) -> int:
    """Exact recurrent-class count of a small dense chain via boolean closure."""
    n = P.shape[0]
    reach = (P > 0) | np.eye(n, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(n))) + 1)):
        reach = reach | (reach.astype(np.int32) @ reach.astype(np.int32) > 0)
    recurrent = np.all(~reach | reach.T, axis=1)
    if not recurrent.any():
        return 0
    mutual = (reach & reach.T)[np.ix_(recurrent, recurrent)]
    return int(np.unique(mutual, axis=0).shape[0])


def evaluate_policy(policy, beta: float, model: Model,
                    actions: ActionSpace | None = None) -> PolicyEvaluation:
    """Exact long-run averages (J, B, K) of a stationary policy.

    Mixed policies are evaluated by marginalizing the per-epoch coin into the
    kernel and costs (xi*P+ + (1-xi)*P-), which equals the product chain of
    (state, coin) exactly since the coin is i.i.d.
    """
    if actions is None:
        actions = build_action_space(model)
    if callable(policy) and not isinstance(policy, (TablePolicy, MixedPolicy)):
        policy = TablePolicy.from_callable(policy, model)

    if isinstance(policy, MixedPolicy):
        sa_p = actions.sa_of_policy(policy.policy_plus)
        sa_m = actions.sa_of_policy(policy.policy_minus)
        xi = policy.xi
        P = (xi * actions.kernel[sa_p] + (1.0 - xi) * actions.kernel[sa_m]).tocsr()
        P.eliminate_zeros()
        qc = xi * actions.queue_sa[sa_p] + (1 - xi) * actions.queue_sa[sa_m]
        gc = xi * actions.grid_sa[sa_p] + (1 - xi) * actions.grid_sa[sa_m]
        oc = xi * actions.overflow_sa[sa_p] + (1 - xi) * actions.overflow_sa[sa_m]
        sc = xi * actions.spill_sa[sa_p] + (1 - xi) * actions.spill_sa[sa_m]
    else:
        sa = actions.sa_of_policy(policy)
        P = actions.kernel[sa].tocsr()
        qc = actions.queue_sa[sa]
        gc = actions.grid_sa[sa]
        oc = actions.overflow_sa[sa]
        sc = actions.spill_sa[sa]

    _assert_unichain(P)
    pi = _stationary_distribution(P)
    b = float(pi @ qc)
    k = float(pi @ gc)
    return PolicyEvaluation(gain_j=b + beta * k, mean_queue_b=b, mean_grid_k=k,
                            stationary_dist=pi, beta=beta,
                            overflow_rate=float(pi @ oc),
                            battery_spill_rate=float(pi @ sc))


# ---------------------------------------------------------------------------
# brute-force oracle


@dataclass
class OracleResult:
    gain: float
    policy: TablePolicy
    evaluation: PolicyEvaluation
    n_policies: int
    n_multichain_skipped: int


def brute_force_solve(beta: float, model: Model, cap: int = 10_000_000,
                      actions: ActionSpace | None = None) -> OracleResult:
    """Enumerate every stationary deterministic policy and keep the best.

    Iteration order is lexicographic in the per-state action index, and only a
    strictly better gain displaces the incumbent, so ties resolve to the
    lexicographically smallest policy — the same tie-break the solvers use.
    """
    if actions is None:
        actions = build_action_space(model)
    n = model.space.n_states
    counts = np.diff(actions.indptr)
    total = 1
    for m in counts:
        total *= int(m)
        if total > cap:
            raise InstanceTooLargeError(
                f"policy count exceeds cap {cap}")

    dense = actions.kernel.toarray()
    cost = actions.queue_sa + beta * actions.grid_sa
    eye = np.eye(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    best_gain = np.inf
    best_sa = None
    skipped = 0
    n_eval = 0
    base = actions.indptr[:-1]
    for combo in itertools.product(*[range(int(m)) for m in counts]):
        sa = base + np.asarray(combo)
        P = dense[sa]
        if _recurrent_class_count(P) != 1:
            skipped += 1
            continue
        A = P.T - eye
        A[-1, :] = 1.0
        piv = np.linalg.solve(A, rhs)
        n_eval += 1
        g = float(piv @ cost[sa])
        if g < best_gain:
            best_gain = g
            best_sa = sa.copy()
    if best_sa is None:
        raise MultichainError("every enumerated policy was multichain")
    policy = actions.policy_from_sa(best_sa)
    ev = evaluate_policy(policy, beta, model, actions=actions)
    return OracleResult(gain=ev.gain_j, policy=policy, evaluation=ev,
                        n_policies=n_eval, n_multichain_skipped=skipped)
