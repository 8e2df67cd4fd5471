"""Risk-aware tabular reinforcement learning with optimal-transport penalties.

The package combines three layers: discrete optimal-transport solvers over
finite state spaces (:mod:`otrl.transport`), finite MDPs with gridworld
construction and dynamic programming (:mod:`otrl.mdp`), and the penalized
objective / Q-learning machinery plus executable theorem checks built on top
(:mod:`otrl.learning`, :mod:`otrl.theorems`). ``otrl.cli`` exposes the
``otrl`` command with subcommands solve-ot, train, sweep, and verify.
"""

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
from .learning import (
    QTable,
    RiskAwareConfig,
    SweepRecord,
    SweepResult,
    TrainingLog,
    ball_states,
    brute_force_optimal,
    evaluate_deterministic_policies,
    expected_visits,
    greedy_policy,
    lambda_sweep,
    penalized_objective,
    risk_aware_q_learning,
)
from .mdp import (
    Gridworld,
    GridworldSpec,
    Policy,
    StateEmbedding,
    TabularMDP,
    build_gridworld,
    discounted_occupancy,
    enumerate_deterministic_policies,
    policy_evaluation,
    stationary_distribution,
    value_iteration,
)
from .theorems import (
    TheoremReport,
    check_theorem1,
    check_theorem2,
    check_theorem3,
    check_theorem4,
    random_mdp,
    replay,
    run_check,
    theorem4_witness_instance,
    witness_check,
)
from .transport import (
    CostMatrix,
    DiscreteDistribution,
    OTSolution,
    TransportPlan,
    build_cost_matrix,
    ot_distance,
    pointwise_risk_cost,
    solve_exact,
    solve_regularized,
)

__version__ = "0.1.0"
