"""Scheduling for an energy-harvesting transmitter.

Solvers (average-cost and discounted value iteration, constrained search),
structural certificates, baseline heuristics and a slot-level simulator for a
buffered link that splits transmit power between a harvesting battery and the
grid.
"""

from .constrained import (
    BudgetInfeasibleError,
    ConstrainedSearchError,
    ConstrainedSolution,
    ConstrainedSolverConfig,
    beta_star_search,
    solve_constrained,
)
from .heuristics import (
    CalibrationResult,
    HeuristicKind,
    MixedHeuristic,
    calibrate_xi,
    conservative_policy,
    greedy_battery,
    make_heuristic,
    mixed_policy,
    mixing_weight,
    radical_policy,
    solve_reduced_rate_mdp,
)
from .mdp import (
    ActionSpace,
    MixedPolicy,
    NonConvergenceError,
    PolicyEvaluation,
    SolveResult,
    SolverConfig,
    TablePolicy,
    ValueTable,
    brute_force_solve,
    build_action_space,
    discounted_value_iteration,
    evaluate_policy,
    relative_value_iteration,
)
from .model import (
    Action,
    CapacityError,
    ConfigError,
    MarkovChainSpec,
    Model,
    ModelParams,
    StateSpace,
    SystemState,
    enumerate_states,
    feasible_actions,
    grid_power,
    load_model,
    model_to_config,
    power_inverse,
    required_power,
    step_battery,
    step_queue,
)
from .sim import (
    PolicyDomainError,
    SimConfig,
    SimResult,
    discretize_rayleigh,
    run_simulation,
    sweep_arrival,
    sweep_budget,
    sweep_channel,
)
from .verify import (
    CertificateReport,
    check_beta_monotonicity,
    check_greedy_regimes,
    check_necessary_conditions,
    check_no_overflow_waste,
    check_policy_monotonicity,
    check_special_states,
    check_value_shape,
    format_reports,
    run_all_checks,
)

__all__ = [
    "Action",
    "ActionSpace",
    "BudgetInfeasibleError",
    "CalibrationResult",
    "CapacityError",
    "CertificateReport",
    "ConfigError",
    "ConstrainedSearchError",
    "ConstrainedSolution",
    "ConstrainedSolverConfig",
    "HeuristicKind",
    "MarkovChainSpec",
    "MixedHeuristic",
    "MixedPolicy",
    "Model",
    "ModelParams",
    "NonConvergenceError",
    "PolicyDomainError",
    "PolicyEvaluation",
    "SimConfig",
    "SimResult",
    "SolveResult",
    "SolverConfig",
    "StateSpace",
    "SystemState",
    "TablePolicy",
    "ValueTable",
    "beta_star_search",
    "brute_force_solve",
    "build_action_space",
    "calibrate_xi",
    "check_beta_monotonicity",
    "check_greedy_regimes",
    "check_necessary_conditions",
    "check_no_overflow_waste",
    "check_policy_monotonicity",
    "check_special_states",
    "check_value_shape",
    "conservative_policy",
    "discounted_value_iteration",
    "discretize_rayleigh",
    "enumerate_states",
    "evaluate_policy",
    "feasible_actions",
    "format_reports",
    "greedy_battery",
    "grid_power",
    "load_model",
    "make_heuristic",
    "mixed_policy",
    "mixing_weight",
    "model_to_config",
    "power_inverse",
    "radical_policy",
    "relative_value_iteration",
    "required_power",
    "run_all_checks",
    "run_simulation",
    "solve_constrained",
    "solve_reduced_rate_mdp",
    "step_battery",
    "step_queue",
    "sweep_arrival",
    "sweep_budget",
    "sweep_channel",
]

__version__ = "0.1.0"
