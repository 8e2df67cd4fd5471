"""Risk-aware objective, brute-force oracle, and penalized Q-learning.

The objective trades expected discounted return against the optimal-transport
distance between the policy's state-visitation distribution and a target risk
distribution:  J(pi, lambda) = E_pi[G] - lambda * kappa * D_OT(P_pi, P_r).
``kappa`` is 1 under ``plain`` scaling (penalty outside the return) and
1 / (1 - gamma) under ``discounted`` scaling (penalty accrued inside the
discounted sum. The Q-learning update applies the matching per-step penalty:
lambda * C(s) * (1 - gamma) for plain, lambda * C(s) for discounted.)

Penalty modes resolve the per-state cost C(s) three ways:

* ``global``    -- the scalar OT distance between the recent empirical
                   visitation distribution and the risk target; every state
                   is charged the same amount.
* ``dual``      -- the exact solver's source potential at s (shifted to be
                   nonnegative), a per-state decomposition of the same total.
* ``pointwise`` -- the forced-coupling cost from Dirac(s) to the target;
                   static, no OT re-solves needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError, OtrlError, TrainingAbortedError
from .mdp import (
    Policy,
    TabularMDP,
    discounted_occupancy,
    enumerate_deterministic_policies,
    policy_evaluation,
    stationary_distribution,
)
from .transport import (
    CostMatrix,
    DiscreteDistribution,
    OTSolution,
    _frozen,
    ot_distance,
    pointwise_risk_cost,
    solve_exact,
    solve_regularized,
)

PENALTY_MODES = ("global", "dual", "pointwise")
PENALTY_SCALINGS = ("plain", "discounted")
DISTRIBUTION_MODES = ("stationary", "occupancy", "empirical")

# Add-one smoothing weight applied to empirical visit counts before an OT
# solve, so the source marginal is strictly feasible.
VISITATION_SMOOTHING = 1e-6

_VALUE_TOL = 1e-10


# ---------------------------------------------------------------------------
# Configuration and result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RiskAwareConfig:
    """Knobs of a penalized Q-learning run.

    Attributes:
        lam: risk sensitivity (the objective's lambda), >= 0.
        alpha0 / alpha_decay: learning rate alpha0 / (1 + alpha_decay * episode).
        epsilon0 / epsilon_decay: exploration rate with the same schedule shape.
        episodes: number of training episodes, >= 1.
        max_steps_per_episode: hard cap per episode; episodes also end when an
            absorbing zero-reward state is reached.
        penalty_mode: one of ``global`` / ``dual`` / ``pointwise``.
        recompute_interval: environment steps between visitation snapshots
            (and OT re-solves for the global/dual modes).
        distribution_mode: which visitation distribution the penalty uses:
            ``empirical`` (window counts), or the analytic ``stationary`` /
            ``occupancy`` of the current epsilon-greedy behavior policy.
        seed: RNG seed; identical seed + config reproduces the run bit-exactly.
        penalty_scaling: ``plain`` (objective form) or ``discounted``.
        damping: restart probability used wherever a stationary distribution
            is computed for this run.
    """

    lam: float = 1.0
    alpha0: float = 0.5
    alpha_decay: float = 0.01
    epsilon0: float = 1.0
    epsilon_decay: float = 0.01
    episodes: int = 1000
    max_steps_per_episode: int = 100
    penalty_mode: str = "global"
    recompute_interval: int = 250
    distribution_mode: str = "empirical"
    seed: int = 0
    penalty_scaling: str = "plain"
    damping: float = 1e-3

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError(f"lambda must be >= 0, got {self.lam!r}")
        if not 0.0 < self.alpha0 <= 1.0:
            raise InvalidInputError(f"alpha0 must be in (0, 1], got {self.alpha0!r}")
        if self.alpha_decay < 0 or self.epsilon_decay < 0:
            raise InvalidInputError("decay parameters must be >= 0")
        if not 0.0 <= self.epsilon0 <= 1.0:
            raise InvalidInputError(f"epsilon0 must be in [0, 1], got {self.epsilon0!r}")
        if self.episodes < 1:
            raise InvalidInputError(f"episodes must be >= 1, got {self.episodes!r}")
        if self.max_steps_per_episode < 1:
            raise InvalidInputError("max_steps_per_episode must be >= 1")
        if self.penalty_mode not in PENALTY_MODES:
            raise InvalidInputError(f"penalty_mode must be one of {PENALTY_MODES}")
        if self.recompute_interval < 1:
            raise InvalidInputError("recompute_interval must be >= 1")
        if self.distribution_mode not in DISTRIBUTION_MODES:
            raise InvalidInputError(
                f"distribution_mode must be one of {DISTRIBUTION_MODES}"
            )
        if self.penalty_scaling not in PENALTY_SCALINGS:
            raise InvalidInputError(f"penalty_scaling must be one of {PENALTY_SCALINGS}")
        if not 0.0 <= self.damping <= 0.1:
            raise InvalidInputError(f"damping must be in [0, 0.1], got {self.damping!r}")


@dataclass(frozen=True)
class QTable:
    """Learned action values; finite by construction."""

    values: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.values, dtype=float)
        if q.ndim != 2:
            raise InvalidInputError("Q values must form an (S, A) matrix")
        if not np.all(np.isfinite(q)):
            raise InvalidInputError("Q values must be finite")
        object.__setattr__(self, "values", _frozen(q))


@dataclass(frozen=True)
class VisitationSnapshot:
    """State of the penalty machinery at one recompute step."""

    step: int
    distribution: DiscreteDistribution  # smoothed empirical window
    ot_cost: float
    dual_shift: float | None = None     # dual mode only
    dual_credits: np.ndarray | None = None

    def __post_init__(self):
        if self.dual_credits is not None:
            object.__setattr__(
                self, "dual_credits", _frozen(np.asarray(self.dual_credits, float))
            )


@dataclass(eq=False)
class TrainingLog:
    """Per-episode diagnostics plus per-recompute visitation snapshots.

    Returns are discounted from the episode start (gamma^t weighting);
    ``penalized_returns`` subtracts the per-step penalty actually applied.
    ``ot_costs`` is the most recent penalty-cost estimate when the episode
    ended (0.0 until the first recompute).
    """

    raw_returns: np.ndarray = field(default_factory=lambda: np.zeros(0))
    penalized_returns: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ot_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hazard_visits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    epsilons: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snapshots: list[VisitationSnapshot] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.raw_returns)


@dataclass(frozen=True)
class SweepRecord:
    lam: float
    policy: Policy
    expected_return: float
    ot_dist: float
    objective: float
    hazard_mass: float
    ball_mass: float


@dataclass(frozen=True)
class SweepResult:
    records: tuple[SweepRecord, ...]
    method: str
    ball_delta: float


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def _kappa(scaling: str, gamma: float) -> float:
    if scaling == "plain":
        return 1.0
    if scaling == "discounted":
        return 1.0 / (1.0 - gamma)
    raise InvalidInputError(f"penalty_scaling must be one of {PENALTY_SCALINGS}")


def _objective_value(expected_return: float, ot_dist: float, lam: float, kappa: float) -> float:
    # Single shared expression so brute force and penalized_objective agree
    # bit-for-bit on identical inputs.
    return expected_return - (lam * kappa) * ot_dist


def _expected_return(mdp: TabularMDP, pi: Policy) -> float:
    return float(mdp.initial.weights @ policy_evaluation(mdp, pi, tol=_VALUE_TOL))


def _visitation(
    mdp: TabularMDP, pi: Policy, dist_mode: str, damping: float
) -> DiscreteDistribution:
    if dist_mode == "stationary":
        return stationary_distribution(mdp, pi, damping=damping)
    if dist_mode == "occupancy":
        return discounted_occupancy(mdp, pi)
    raise InvalidInputError(
        f"distribution mode {dist_mode!r} is not an analytic visitation mode"
    )


def penalized_objective(
    mdp: TabularMDP,
    pi: Policy,
    p_r: DiscreteDistribution,
    C: CostMatrix,
    lam: float,
    scaling: str = "plain",
    dist_mode: str = "stationary",
    damping: float = 1e-3,
) -> float:
    """E_pi[G] - lambda * kappa * D_OT(P_pi, p_r) for one policy."""
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam!r}")
    expected = _expected_return(mdp, pi)
    dist = _visitation(mdp, pi, dist_mode, damping)
    d = ot_distance(dist, p_r, C)
    return _objective_value(expected, d, lam, _kappa(scaling, mdp.discount))


# ---------------------------------------------------------------------------
# Brute-force oracle over deterministic policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyStats:
    """Per-policy quantities that do not depend on lambda."""

    policy: Policy
    expected_return: float
    ot_dist: float
    visitation: DiscreteDistribution


def evaluate_deterministic_policies(
    mdp: TabularMDP,
    p_r: DiscreteDistribution,
    C: CostMatrix,
    dist_mode: str = "stationary",
    damping: float = 1e-3,
) -> list[PolicyStats]:
    """Expected return and OT distance for every deterministic policy.

    The OT solve is cached on the visitation distribution's exact bytes, so
    policies inducing bit-identical distributions share one solve (this is
    common: actions at unreachable states do not move the distribution).
    """
    stats: list[PolicyStats] = []
    ot_cache: dict[bytes, float] = {}
    for pi in enumerate_deterministic_policies(mdp):
        expected = _expected_return(mdp, pi)
        dist = _visitation(mdp, pi, dist_mode, damping)
        key = dist.weights.tobytes()
        if key not in ot_cache:
            ot_cache[key] = ot_distance(dist, p_r, C)
        stats.append(PolicyStats(pi, expected, ot_cache[key], dist))
    return stats


def _argmax_first(stats: list[PolicyStats], lam: float, kappa: float) -> tuple[int, float]:
    best_idx = 0
    best_val = -math.inf
    for idx, st in enumerate(stats):
        val = _objective_value(st.expected_return, st.ot_dist, lam, kappa)
        if val > best_val:
            best_val = val
            best_idx = idx
    return best_idx, best_val


def brute_force_optimal(
    mdp: TabularMDP,
    p_r: DiscreteDistribution,
    C: CostMatrix,
    lam: float,
    scaling: str = "plain",
    dist_mode: str = "stationary",
    damping: float = 1e-3,
) -> tuple[Policy, float]:
    """Deterministic policy maximizing the penalized objective.

    Ties are broken by enumeration order (the lexicographically first
    maximizer wins).
    """
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam!r}")
    stats = evaluate_deterministic_policies(mdp, p_r, C, dist_mode, damping)
    idx, val = _argmax_first(stats, lam, _kappa(scaling, mdp.discount))
    return stats[idx].policy, val


# ---------------------------------------------------------------------------
# Penalized Q-learning
# ---------------------------------------------------------------------------

def greedy_policy(q: QTable) -> Policy:
    """Deterministic argmax policy; ties go to the lowest action index."""
    return Policy.deterministic(q.values.argmax(axis=1), q.values.shape[1])


def _normalized_dual_credits(
    solution: OTSolution, p_r: DiscreteDistribution
) -> tuple[np.ndarray, float]:
    """Shifted source potential: nonnegative, sums against the empirical
    marginal to (total OT cost - shift). The constant freedom of the duals is
    first fixed so the target side contributes zero."""
    balance = float(p_r.weights @ solution.dual_target)
    source = solution.dual_source + balance
    shift = float(source.min())
    return source - shift, shift


def _absorbing_zero_states(mdp: TabularMDP) -> np.ndarray:
    self_loop = np.array(
        [
            all(mdp.transition[s, a, s] == 1.0 for a in range(mdp.n_actions))
            for s in range(mdp.n_states)
        ]
    )
    zero_reward = np.all(mdp.reward == 0.0, axis=1)
    return self_loop & zero_reward


def _behavior_policy(q: np.ndarray, eps: float, n_actions: int) -> Policy:
    greedy = q.argmax(axis=1)
    probs = np.full(q.shape, eps / n_actions)
    probs[np.arange(q.shape[0]), greedy] += 1.0 - eps
    return Policy(probs)


def risk_aware_q_learning(
    mdp: TabularMDP,
    p_r: DiscreteDistribution,
    C: CostMatrix,
    config: RiskAwareConfig,
    hazard_states: frozenset[int] = frozenset(),
    ot_solver: str = "exact",
    ot_epsilon: float | None = None,
) -> tuple[QTable, TrainingLog]:
    """Episodic epsilon-greedy Q-learning with the penalized update

        Q(s, a) += alpha * [R(s, a) - lambda * kstep * C(s)
                            + gamma * max_a' Q(s', a') - Q(s, a)]

    where ``kstep`` matches the configured penalty scaling and C(s) follows
    the configured penalty mode. For the global/dual modes the OT problem is
    re-solved every ``recompute_interval`` environment steps from the recent
    visitation window; until the first recompute the penalty is zero. The
    run is fully deterministic given the seed.

    ``ot_solver`` selects the recompute solver (``exact`` or ``regularized``
    with ``ot_epsilon``); the dual mode requires exact duals.

    Raises:
        TrainingAbortedError: NaN in the Q table or a solver failure during
            a recompute.
    """
    if p_r.n != mdp.n_states or C.n != mdp.n_states:
        raise InvalidInputError("risk distribution / cost matrix do not match the MDP")
    if ot_solver not in ("exact", "regularized"):
        raise InvalidInputError(f"unknown ot_solver {ot_solver!r}")
    if config.penalty_mode == "dual" and ot_solver != "exact":
        raise InvalidInputError("dual penalty mode requires the exact solver's duals")

    n, n_actions = mdp.n_states, mdp.n_actions
    gamma = mdp.discount
    rng = np.random.default_rng(config.seed)
    cum_transition = mdp.transition.cumsum(axis=2)
    cum_initial = mdp.initial.weights.cumsum()
    absorbing = _absorbing_zero_states(mdp)
    kstep = config.lam * (1.0 - gamma if config.penalty_scaling == "plain" else 1.0)
    cpw = pointwise_cost_vector(p_r, C)  # static per-state risk costs

    q = np.zeros((n, n_actions))
    log = TrainingLog(
        raw_returns=np.zeros(config.episodes),
        penalized_returns=np.zeros(config.episodes),
        ot_costs=np.zeros(config.episodes),
        hazard_visits=np.zeros(config.episodes, dtype=int),
        epsilons=np.zeros(config.episodes),
    )

    interval = config.recompute_interval
    window = np.zeros(interval, dtype=int)
    counts = np.zeros(n)
    window_fill = 0
    current_cost = 0.0
    credits = np.zeros(n)
    global_step = 0

    def recompute(step: int) -> None:
        nonlocal current_cost, credits
        if config.distribution_mode == "empirical":
            p_hat = DiscreteDistribution.from_counts(counts + VISITATION_SMOOTHING)
        else:
            eps_now = config.epsilon0 / (1.0 + config.epsilon_decay * episode)
            behavior = _behavior_policy(q, eps_now, n_actions)
            p_hat = _visitation(mdp, behavior, config.distribution_mode, config.damping)
        if config.penalty_mode == "pointwise":
            current_cost = float(p_hat.weights @ cpw)
            log.snapshots.append(VisitationSnapshot(step, p_hat, current_cost))
            return
        try:
            if ot_solver == "exact":
                solution = solve_exact(p_hat, p_r, C)
            else:
                solution = solve_regularized(p_hat, p_r, C, epsilon=ot_epsilon)
        except OtrlError as err:
            raise TrainingAbortedError(
                f"OT recompute failed at step {step}: {err}"
            ) from err
        current_cost = solution.cost
        if config.penalty_mode == "dual":
            credits, shift = _normalized_dual_credits(solution, p_r)
            log.snapshots.append(
                VisitationSnapshot(step, p_hat, current_cost, shift, credits)
            )
        else:
            log.snapshots.append(VisitationSnapshot(step, p_hat, current_cost))

    for episode in range(config.episodes):
        eps = config.epsilon0 / (1.0 + config.epsilon_decay * episode)
        alpha = config.alpha0 / (1.0 + config.alpha_decay * episode)
        s = int(np.searchsorted(cum_initial, rng.random()))
        raw_ret = 0.0
        pen_ret = 0.0
        hazard_count = 0
        discount_t = 1.0
        for _ in range(config.max_steps_per_episode):
            if absorbing[s]:
                break
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = int(q[s].argmax())

            # window bookkeeping for the state the update is charged at
            slot = global_step % interval
            if window_fill >= interval:
                counts[window[slot]] -= 1
            else:
                window_fill += 1
            window[slot] = s
            counts[s] += 1
            global_step += 1

            if config.penalty_mode == "global":
                c_s = current_cost
            elif config.penalty_mode == "dual":
                c_s = credits[s]
            else:
                c_s = cpw[s]

            s2 = int(np.searchsorted(cum_transition[s, a], rng.random()))
            r = mdp.reward[s, a]
            penalty = kstep * c_s
            q_sa = q[s, a]
            q_sa = q_sa + alpha * (r - penalty + gamma * q[s2].max() - q_sa)
            if not math.isfinite(q_sa):
                raise TrainingAbortedError(
                    f"non-finite Q value at episode {episode}, state {s}, action {a}"
                )
            q[s, a] = q_sa

            raw_ret += discount_t * r
            pen_ret += discount_t * (r - penalty)
            discount_t *= gamma
            if s2 in hazard_states:
                hazard_count += 1
            s = s2

            if global_step % interval == 0:
                recompute(global_step)

        log.raw_returns[episode] = raw_ret
        log.penalized_returns[episode] = pen_ret
        log.ot_costs[episode] = current_cost
        log.hazard_visits[episode] = hazard_count
        log.epsilons[episode] = eps

    return QTable(q), log


# ---------------------------------------------------------------------------
# Risk balls and visitation mass
# ---------------------------------------------------------------------------

def pointwise_cost_vector(p_r: DiscreteDistribution, C: CostMatrix) -> np.ndarray:
    """pointwise_risk_cost evaluated at every state, as one vector."""
    return np.array([pointwise_risk_cost(s, p_r, C) for s in range(C.n)])


def ball_states(
    p_r: DiscreteDistribution, C: CostMatrix, delta: float
) -> frozenset[int]:
    """States whose Dirac-to-target transport cost is at most delta."""
    if delta < 0:
        raise InvalidInputError(f"delta must be >= 0, got {delta!r}")
    cpw = pointwise_cost_vector(p_r, C)
    return frozenset(int(s) for s in np.flatnonzero(cpw <= delta))


def expected_visits(
    mdp: TabularMDP,
    pi: Policy,
    states: frozenset[int] | set[int],
    dist_mode: str = "stationary",
    damping: float = 1e-3,
) -> float:
    """Visitation mass assigned to ``states`` under the configured mode."""
    if any(not 0 <= s < mdp.n_states for s in states):
        raise InvalidInputError("state set contains out-of-range indices")
    dist = _visitation(mdp, pi, dist_mode, damping)
    idx = sorted(states)
    return float(dist.weights[idx].sum()) if idx else 0.0


# ---------------------------------------------------------------------------
# Lambda sweeps
# ---------------------------------------------------------------------------

def lambda_sweep(
    mdp: TabularMDP,
    p_r: DiscreteDistribution,
    C: CostMatrix,
    lambdas,
    method: str = "brute",
    config: RiskAwareConfig | None = None,
    hazard_states: frozenset[int] = frozenset(),
    ball_delta: float | None = None,
    ot_solver: str = "exact",
    ot_epsilon: float | None = None,
) -> SweepResult:
    """One record per lambda: the optimal (or learned) policy and its metrics.

    ``method='brute'`` evaluates every deterministic policy once and reuses
    the cache across the whole grid; ``method='qlearning'`` trains a fresh
    run per lambda with the same seed. Record metrics are computed from the
    analytic visitation distribution (stationary with the config's damping
    when the config says ``empirical``). ``ball_delta`` defaults to the
    smallest pointwise risk cost, so the ball is the set of best-aligned
    states.
    """
    lambdas = [float(l) for l in lambdas]
    if len(lambdas) == 0:
        raise InvalidInputError("lambda list must be nonempty")
    if any(l < 0 for l in lambdas):
        raise InvalidInputError("lambda values must be >= 0")
    if sorted(lambdas) != lambdas:
        raise InvalidInputError("lambda values must be sorted ascending")
    if method not in ("brute", "qlearning"):
        raise InvalidInputError(f"unknown sweep method {method!r}")
    config = config if config is not None else RiskAwareConfig()

    dist_mode = (
        config.distribution_mode
        if config.distribution_mode in ("stationary", "occupancy")
        else "stationary"
    )
    kappa = _kappa(config.penalty_scaling, mdp.discount)
    cpw = pointwise_cost_vector(p_r, C)
    delta = float(cpw.min()) if ball_delta is None else float(ball_delta)
    ball = sorted(ball_states(p_r, C, delta))
    hazard_idx = sorted(hazard_states)

    def record_for(lam: float, pi: Policy, expected: float, dist: DiscreteDistribution,
                   d: float) -> SweepRecord:
        return SweepRecord(
            lam=lam,
            policy=pi,
            expected_return=expected,
            ot_dist=d,
            objective=_objective_value(expected, d, lam, kappa),
            hazard_mass=float(dist.weights[hazard_idx].sum()) if hazard_idx else 0.0,
            ball_mass=float(dist.weights[ball].sum()) if ball else 0.0,
        )

    records: list[SweepRecord] = []
    if method == "brute":
        stats = evaluate_deterministic_policies(mdp, p_r, C, dist_mode, config.damping)
        for lam in lambdas:
            idx, _ = _argmax_first(stats, lam, kappa)
            st = stats[idx]
            records.append(
                record_for(lam, st.policy, st.expected_return, st.visitation, st.ot_dist)
            )
    else:
        ot_cache: dict[bytes, float] = {}
        for lam in lambdas:
            run_cfg = replace(config, lam=lam)
            q, _ = risk_aware_q_learning(
                mdp, p_r, C, run_cfg,
                hazard_states=hazard_states,
                ot_solver=ot_solver,
                ot_epsilon=ot_epsilon,
            )
            pi = greedy_policy(q)
            expected = _expected_return(mdp, pi)
            dist = _visitation(mdp, pi, dist_mode, config.damping)
            key = dist.weights.tobytes()
            if key not in ot_cache:
                ot_cache[key] = ot_distance(dist, p_r, C)
            records.append(record_for(lam, pi, expected, dist, ot_cache[key]))

    return SweepResult(records=tuple(records), method=method, ball_delta=delta)
