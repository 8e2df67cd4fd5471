"""Unit tests for the MDP layer: gridworlds, distributions, DP solvers."""

import numpy as np
import pytest

import otrl
from otrl.errors import EnumerationTooLargeError, GridParseError, InvalidInputError
from otrl.mdp import DOWN, LEFT, RIGHT, UP, policy_transition_matrix


def cycle_mdp(gamma=0.5):
    """Two states, both actions deterministic: action 0 swaps, action 1 stays."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 0] = 1.0
    P[0, 1, 0] = 1.0
    P[1, 1, 1] = 1.0
    return otrl.TabularMDP(
        P, np.zeros((2, 2)), gamma, otrl.DiscreteDistribution.dirac(2, 0)
    )


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

class TestTabularMDP:
    def test_rejects_bad_row_sums(self):
        P = np.zeros((2, 1, 2))
        P[:, 0, 0] = 0.9
        with pytest.raises(InvalidInputError):
            otrl.TabularMDP(P, np.zeros((2, 1)), 0.9, otrl.DiscreteDistribution.uniform(2))

    def test_rejects_gamma_one(self):
        P = np.zeros((1, 1, 1))
        P[0, 0, 0] = 1.0
        with pytest.raises(InvalidInputError):
            otrl.TabularMDP(P, np.zeros((1, 1)), 1.0, otrl.DiscreteDistribution.uniform(1))

    def test_row_sums_within_tolerance_kept(self):
        P = np.zeros((1, 1, 1))
        P[0, 0, 0] = 1.0 + 5e-10
        mdp = otrl.TabularMDP(P, np.zeros((1, 1)), 0.5, otrl.DiscreteDistribution.uniform(1))
        assert abs(mdp.transition.sum() - (1.0 + 5e-10)) < 1e-15


class TestPolicy:
    def test_row_validation(self):
        with pytest.raises(InvalidInputError):
            otrl.Policy(np.array([[0.5, 0.4]]))

    def test_deterministic(self):
        pi = otrl.Policy.deterministic([1, 0], 2)
        assert np.array_equal(pi.actions, [1, 0])


# ---------------------------------------------------------------------------
# Gridworld construction
# ---------------------------------------------------------------------------

class TestGridworld:
    def test_one_by_two_forced_dynamics(self):
        world = otrl.build_gridworld(otrl.GridworldSpec(rows=("SG",), slip_prob=0.0))
        assert world.mdp.n_states == 2
        goal = next(iter(world.goal_states))
        assert world.mdp.transition[world.start_state, RIGHT, goal] == 1.0

    def test_center_hazard_default_risk(self):
        world = otrl.build_gridworld(otrl.GridworldSpec(rows=("S..", ".H.", "..G")))
        hazard = next(iter(world.hazard_states))
        assert world.risk.weights[hazard] == 0.0
        others = [s for s in range(9) if s != hazard]
        assert np.allclose(world.risk.weights[others], 1.0 / 8.0)

    def test_slip_split(self):
        world = otrl.build_gridworld(
            otrl.GridworldSpec(rows=("S..", "...", "..G"), slip_prob=0.2)
        )
        s = world.start_state
        row = world.mdp.transition[s, RIGHT]
        east = world.state_at(0, 1)
        south = world.state_at(1, 0)
        assert row[east] == pytest.approx(0.8)
        assert row[south] == pytest.approx(0.1)  # perpendicular slip
        assert row[s] == pytest.approx(0.1)      # slip up bounces off the border

    def test_goal_absorbing_zero_reward(self):
        world = otrl.build_gridworld(otrl.GridworldSpec(rows=("SG",)))
        goal = next(iter(world.goal_states))
        assert np.all(world.mdp.transition[goal, :, goal] == 1.0)
        assert np.all(world.mdp.reward[goal] == 0.0)

    def test_hazard_entry_reward(self):
        world = otrl.build_gridworld(
            otrl.GridworldSpec(rows=("SHG",), hazard_reward=-5.0, step_reward=-1.0)
        )
        assert world.mdp.reward[world.start_state, RIGHT] == -5.0
        # bumping a wall costs a step
        assert world.mdp.reward[world.start_state, LEFT] == -1.0

    def test_embedding_is_row_col(self):
        world = otrl.build_gridworld(otrl.GridworldSpec(rows=("S.", ".G")))
        assert world.embedding.dim == 2
        assert np.array_equal(world.embedding.coords[world.state_at(1, 0)], [1.0, 0.0])

    def test_parse_errors_carry_location(self):
        with pytest.raises(GridParseError) as err:
            otrl.GridworldSpec(rows=("S?G",))
        assert err.value.row == 0 and err.value.col == 1
        with pytest.raises(GridParseError):
            otrl.GridworldSpec(rows=("SG", "S"))
        with pytest.raises(GridParseError):
            otrl.GridworldSpec(rows=("..G",))
        with pytest.raises(GridParseError):
            otrl.GridworldSpec(rows=("SS", ".G"))
        with pytest.raises(GridParseError):
            otrl.GridworldSpec(rows=("S.",))


# ---------------------------------------------------------------------------
# Stationary distribution
# ---------------------------------------------------------------------------

class TestStationaryDistribution:
    def test_absorbing_state_dirac(self):
        # star chain: every state walks to the absorbing middle
        P = np.zeros((3, 1, 3))
        P[0, 0, 1] = 1.0
        P[1, 0, 1] = 1.0
        P[2, 0, 1] = 1.0
        mdp = otrl.TabularMDP(P, np.zeros((3, 1)), 0.9, otrl.DiscreteDistribution.uniform(3))
        p = otrl.stationary_distribution(mdp, otrl.Policy.uniform(3, 1), damping=0.0)
        assert p.weights[1] == pytest.approx(1.0, abs=1e-10)

    def test_periodic_swap_chain(self):
        mdp = cycle_mdp()
        pi = otrl.Policy.deterministic([0, 0], 2)
        p = otrl.stationary_distribution(mdp, pi, damping=0.0)
        assert np.allclose(p.weights, [0.5, 0.5], atol=1e-10)

    def test_fixed_point_residual(self):
        rng = np.random.default_rng(0)
        for damping in (0.0, 1e-3, 0.1):
            P = rng.dirichlet(np.ones(3), size=(3, 2))
            mdp = otrl.TabularMDP(
                P, np.zeros((3, 2)), 0.9, otrl.DiscreteDistribution.uniform(3)
            )
            pi = otrl.Policy.uniform(3, 2)
            p = otrl.stationary_distribution(mdp, pi, damping=damping)
            chain = policy_transition_matrix(mdp, pi)
            damped = (1 - damping) * chain + damping * np.tile(
                mdp.initial.weights, (3, 1)
            )
            assert np.abs(p.weights @ damped - p.weights).sum() <= 1e-8

    def test_damping_range_enforced(self):
        mdp = cycle_mdp()
        with pytest.raises(InvalidInputError):
            otrl.stationary_distribution(mdp, otrl.Policy.uniform(2, 2), damping=0.5)


# ---------------------------------------------------------------------------
# Discounted occupancy
# ---------------------------------------------------------------------------

class TestDiscountedOccupancy:
    def test_gamma_zero_is_initial(self):
        mdp = cycle_mdp(gamma=0.0)
        rho = otrl.discounted_occupancy(mdp, otrl.Policy.uniform(2, 2))
        assert np.allclose(rho.weights, mdp.initial.weights, atol=1e-12)

    def test_absorbing_start(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 0] = 1.0
        P[1, 0, 0] = 1.0
        mdp = otrl.TabularMDP(P, np.zeros((2, 1)), 0.9, otrl.DiscreteDistribution.dirac(2, 0))
        rho = otrl.discounted_occupancy(mdp, otrl.Policy.uniform(2, 1))
        assert rho.weights[0] == pytest.approx(1.0, abs=1e-12)

    def test_two_state_cycle_truncated_sum_oracle(self):
        mdp = cycle_mdp(gamma=0.5)
        pi = otrl.Policy.deterministic([0, 0], 2)
        rho = otrl.discounted_occupancy(mdp, pi)
        # oracle: truncated geometric sum over 50 steps
        chain = policy_transition_matrix(mdp, pi)
        p_t = mdp.initial.weights.copy()
        acc = np.zeros(2)
        for t in range(50):
            acc += (1 - 0.5) * 0.5**t * p_t
            p_t = p_t @ chain
        assert np.allclose(rho.weights, acc, atol=1e-12)
        assert np.allclose(rho.weights, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_sums_to_one_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            P = rng.dirichlet(np.ones(n), size=(n, 2))
            mdp = otrl.TabularMDP(
                P, np.zeros((n, 2)), 0.95, otrl.DiscreteDistribution.uniform(n)
            )
            rho = otrl.discounted_occupancy(mdp, otrl.Policy.uniform(n, 2))
            assert abs(rho.weights.sum() - 1.0) <= 1e-9
            assert np.all(rho.weights >= 0)


# ---------------------------------------------------------------------------
# Policy evaluation / value iteration
# ---------------------------------------------------------------------------

class TestPolicyEvaluation:
    def test_zero_rewards(self):
        mdp = cycle_mdp()
        V = otrl.policy_evaluation(mdp, otrl.Policy.uniform(2, 2), tol=1e-10)
        assert np.allclose(V, 0.0)

    def test_single_state_geometric(self):
        P = np.ones((1, 1, 1))
        mdp = otrl.TabularMDP(P, np.ones((1, 1)), 0.9, otrl.DiscreteDistribution.uniform(1))
        V = otrl.policy_evaluation(mdp, otrl.Policy.uniform(1, 1), tol=1e-10)
        assert V[0] == pytest.approx(10.0, abs=1e-8)

    def test_matches_linear_solve(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(2, 21))
            P = rng.dirichlet(np.ones(n), size=(n, 3))
            R = rng.uniform(-1, 1, size=(n, 3))
            mdp = otrl.TabularMDP(P, R, 0.9, otrl.DiscreteDistribution.uniform(n))
            pi = otrl.Policy(rng.dirichlet(np.ones(3), size=n))
            V = otrl.policy_evaluation(mdp, pi, tol=1e-10)
            chain = policy_transition_matrix(mdp, pi)
            r_pi = np.einsum("sa,sa->s", pi.action_probs, mdp.reward)
            V_direct = np.linalg.solve(np.eye(n) - 0.9 * chain, r_pi)
            assert np.abs(V - V_direct).max() <= 1e-6


class TestValueIteration:
    def test_zero_rewards_tie_break(self):
        mdp = cycle_mdp()
        V, Q, greedy = otrl.value_iteration(mdp, tol=1e-10)
        assert np.allclose(V, 0.0)
        assert np.array_equal(greedy.actions, [0, 0])

    def test_corridor_hand_rollout(self):
        # 'S.G' with step -1, goal +10, gamma 0.9, entry-reward convention:
        # always-right collects -1 then 0.9 * 10.
        world = otrl.build_gridworld(
            otrl.GridworldSpec(rows=("S.G",), step_reward=-1.0, goal_reward=10.0),
            discount=0.9,
        )
        V, Q, greedy = otrl.value_iteration(world.mdp, tol=1e-12)
        assert V[world.start_state] == pytest.approx(-1.0 + 0.9 * 10.0, abs=1e-9)
        non_goal = [s for s in range(3) if s not in world.goal_states]
        assert all(greedy.actions[s] == RIGHT for s in non_goal)

    def test_dominates_random_policies(self):
        rng = np.random.default_rng(3)
        n, A = 5, 3
        P = rng.dirichlet(np.ones(n), size=(n, A))
        R = rng.uniform(-1, 1, size=(n, A))
        mdp = otrl.TabularMDP(P, R, 0.9, otrl.DiscreteDistribution.uniform(n))
        V_star, _, _ = otrl.value_iteration(mdp, tol=1e-10)
        for _ in range(20):
            pi = otrl.Policy(rng.dirichlet(np.ones(A), size=n))
            V_pi = otrl.policy_evaluation(mdp, pi, tol=1e-10)
            assert np.all(V_star >= V_pi - 1e-8)

    def test_greedy_is_fixed_point(self):
        rng = np.random.default_rng(4)
        for seed in range(5):
            mdp, _, _ = otrl.random_mdp(seed, n_states=4, n_actions=3)
            _, _, greedy = otrl.value_iteration(mdp, tol=1e-12)
            V = otrl.policy_evaluation(mdp, greedy, tol=1e-12)
            Q = mdp.reward + mdp.discount * np.einsum("sat,t->sa", mdp.transition, V)
            assert np.array_equal(Q.argmax(axis=1), greedy.actions)


# ---------------------------------------------------------------------------
# Policy enumeration
# ---------------------------------------------------------------------------

class TestEnumerateDeterministicPolicies:
    def test_counts(self):
        mdp, _, _ = otrl.random_mdp(0, n_states=2, n_actions=2)
        assert len(list(otrl.enumerate_deterministic_policies(mdp))) == 4

    def test_lexicographic_order(self):
        mdp, _, _ = otrl.random_mdp(0, n_states=3, n_actions=2)
        policies = list(otrl.enumerate_deterministic_policies(mdp))
        assert len(policies) == 8
        assert np.array_equal(policies[0].actions, [0, 0, 0])
        assert np.array_equal(policies[1].actions, [0, 0, 1])
        assert np.array_equal(policies[-1].actions, [1, 1, 1])

    def test_duplicate_free(self):
        mdp, _, _ = otrl.random_mdp(1, n_states=3, n_actions=3)
        seen = {tuple(pi.actions) for pi in otrl.enumerate_deterministic_policies(mdp)}
        assert len(seen) == 27

    def test_guard(self):
        n = 21  # 2^21 > 10^6
        P = np.zeros((n, 2, n))
        P[np.arange(n), :, np.arange(n)] = 1.0
        mdp = otrl.TabularMDP(
            P, np.zeros((n, 2)), 0.9, otrl.DiscreteDistribution.uniform(n)
        )
        with pytest.raises(EnumerationTooLargeError):
            next(otrl.enumerate_deterministic_policies(mdp))
