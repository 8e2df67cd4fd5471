"""Finite MDPs, gridworld construction, and dynamic-programming solvers.

The gridworld text format is one row per line with cells ``S`` (start, one
required), ``G`` (goal, at least one), ``H`` (hazard), ``#`` (wall), and
``.`` (free). Walls are not states; all other cells map to state indices in
row-major order. Actions are UP=0, DOWN=1, LEFT=2, RIGHT=3. A move into a
wall or off the grid leaves the agent in place. Goal states are absorbing
with zero reward once entered; rewards are paid on entry to the destination
cell (goal_reward / hazard_reward / step_reward).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import (
    ConvergenceFailureError,
    EnumerationTooLargeError,
    GridParseError,
    InvalidInputError,
)
from .transport import DiscreteDistribution, _frozen

ROW_SUM_ATOL = 1e-9

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
N_GRID_ACTIONS = 4
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
_PERPENDICULAR = ((LEFT, RIGHT), (LEFT, RIGHT), (UP, DOWN), (UP, DOWN))

GRID_CHARS = frozenset("SGH#.")

ENUMERATION_GUARD = 10**6


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP: transition tensor P[s, a, s'], reward table R[s, a],
    discount in [0, 1), and an initial state distribution."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial: DiscreteDistribution

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidInputError("transition must have shape (S, A, S)")
        S, A, _ = P.shape
        if R.shape != (S, A):
            raise InvalidInputError(f"reward must have shape ({S}, {A}), got {R.shape}")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(R)):
            raise InvalidInputError("transition and reward entries must be finite")
        if np.any(P < 0):
            raise InvalidInputError("transition probabilities must be nonnegative")
        row_err = np.abs(P.sum(axis=2) - 1.0).max()
        if row_err > ROW_SUM_ATOL:
            raise InvalidInputError(
                f"transition rows must sum to 1 (worst deviation {row_err:.3e})"
            )
        # Strictly below 1: the discounted objective and every contraction
        # argument in this package require it.
        if not (0.0 <= self.discount < 1.0):
            raise InvalidInputError(
                f"discount must satisfy 0 <= gamma < 1, got {self.discount!r}"
            )
        if self.initial.n != S:
            raise InvalidInputError(
                f"initial distribution has {self.initial.n} states, expected {S}"
            )
        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "reward", _frozen(R))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class Policy:
    """Per-state action distribution; rows of ``action_probs`` sum to 1."""

    action_probs: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.action_probs, dtype=float)
        if pi.ndim != 2 or pi.shape[0] == 0 or pi.shape[1] == 0:
            raise InvalidInputError("action_probs must be a nonempty (S, A) matrix")
        if not np.all(np.isfinite(pi)) or np.any(pi < 0):
            raise InvalidInputError("action probabilities must be finite and >= 0")
        row_err = np.abs(pi.sum(axis=1) - 1.0).max()
        if row_err > ROW_SUM_ATOL:
            raise InvalidInputError(
                f"policy rows must sum to 1 (worst deviation {row_err:.3e})"
            )
        object.__setattr__(self, "action_probs", _frozen(pi))

    @property
    def n_states(self) -> int:
        return self.action_probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.action_probs.shape[1]

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        acts = np.asarray(actions, dtype=int)
        if acts.ndim != 1:
            raise InvalidInputError("actions must be a 1-D index vector")
        if np.any(acts < 0) or np.any(acts >= n_actions):
            raise InvalidInputError("action index out of range")
        pi = np.zeros((acts.size, n_actions))
        pi[np.arange(acts.size), acts] = 1.0
        return cls(pi)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def actions(self) -> np.ndarray:
        """Most probable action per state (lowest index on ties)."""
        return self.action_probs.argmax(axis=1)


@dataclass(frozen=True)
class StateEmbedding:
    """Coordinates of each state in a common d-dimensional space."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] < 1:
            raise InvalidInputError("coords must be a nonempty (n, d) array, d >= 1")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("coordinates must be finite")
        object.__setattr__(self, "coords", _frozen(c))

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, object]) -> "StateEmbedding":
        if len(mapping) == 0:
            raise InvalidInputError("embedding mapping is empty")
        keys = sorted(mapping)
        if keys != list(range(len(keys))):
            raise InvalidInputError("embedding keys must be 0..n-1")
        rows = [np.atleast_1d(np.asarray(mapping[k], dtype=float)) for k in keys]
        if len({r.shape for r in rows}) != 1:
            raise InvalidInputError("embedding vectors must share one dimension")
        return cls(np.stack(rows))

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class GridworldSpec:
    """A rectangular map plus the numeric parameters of its dynamics."""

    rows: tuple[str, ...]
    step_reward: float = -1.0
    goal_reward: float = 10.0
    hazard_reward: float = -1.0
    slip_prob: float = 0.0

    def __post_init__(self):
        if len(self.rows) == 0:
            raise GridParseError("map has no rows")
        width = len(self.rows[0])
        if width == 0:
            raise GridParseError("map rows are empty", row=0)
        starts = 0
        goals = 0
        for r, line in enumerate(self.rows):
            if len(line) != width:
                raise GridParseError(
                    f"map is not rectangular (row length {len(line)} != {width})",
                    row=r,
                )
            for c, ch in enumerate(line):
                if ch not in GRID_CHARS:
                    raise GridParseError(f"unknown map cell {ch!r}", row=r, col=c)
                starts += ch == "S"
                goals += ch == "G"
        if starts != 1:
            raise GridParseError(f"map must have exactly one start cell, found {starts}")
        if goals == 0:
            raise GridParseError("map must have at least one goal cell")
        if not 0.0 <= self.slip_prob <= 1.0:
            raise InvalidInputError(f"slip_prob must be in [0, 1], got {self.slip_prob!r}")

    @classmethod
    def from_text(cls, text: str, **params) -> "GridworldSpec":
        rows = tuple(line for line in text.splitlines() if line.strip() != "")
        return cls(rows=rows, **params)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.rows[0]))


@dataclass(frozen=True)
class Gridworld:
    """Built gridworld: the MDP plus the structure tests and tools need."""

    spec: GridworldSpec
    mdp: TabularMDP
    embedding: StateEmbedding
    risk: DiscreteDistribution  # default: uniform over non-hazard cells
    state_cells: tuple[tuple[int, int], ...]
    start_state: int
    goal_states: frozenset[int]
    hazard_states: frozenset[int]

    def state_at(self, row: int, col: int) -> int:
        return self.state_cells.index((row, col))


def build_gridworld(spec: GridworldSpec, discount: float = 0.9) -> Gridworld:
    """Construct the MDP, (row, col) embedding, and default risk distribution.

    Dynamics: the intended move happens with probability ``1 - slip_prob``;
    the remaining mass splits evenly over the two perpendicular moves. Moves
    into walls or borders stay in place. Hazards are ordinary, enterable,
    non-absorbing cells; only their entry reward differs.
    """
    n_rows, n_cols = spec.shape
    cells: list[tuple[int, int]] = []
    index: dict[tuple[int, int], int] = {}
    for r in range(n_rows):
        for c in range(n_cols):
            if spec.rows[r][c] != "#":
                index[(r, c)] = len(cells)
                cells.append((r, c))
    n = len(cells)
    start = next(index[rc] for rc in cells if spec.rows[rc[0]][rc[1]] == "S")
    goal_states = frozenset(
        index[rc] for rc in cells if spec.rows[rc[0]][rc[1]] == "G"
    )
    hazard_states = frozenset(
        index[rc] for rc in cells if spec.rows[rc[0]][rc[1]] == "H"
    )

    def entry_reward(rc: tuple[int, int]) -> float:
        ch = spec.rows[rc[0]][rc[1]]
        if ch == "G":
            return spec.goal_reward
        if ch == "H":
            return spec.hazard_reward
        return spec.step_reward

    P = np.zeros((n, N_GRID_ACTIONS, n))
    R = np.zeros((n, N_GRID_ACTIONS))
    for (r, c), s in index.items():
        for a in range(N_GRID_ACTIONS):
            if s in goal_states:
                P[s, a, s] = 1.0  # absorbing, zero reward
                continue
            outcomes = [(a, 1.0 - spec.slip_prob)]
            for perp in _PERPENDICULAR[a]:
                outcomes.append((perp, spec.slip_prob / 2.0))
            for move, prob in outcomes:
                if prob == 0.0:
                    continue
                dr, dc = _MOVES[move]
                nr, nc = r + dr, c + dc
                if not (0 <= nr < n_rows and 0 <= nc < n_cols) or spec.rows[nr][nc] == "#":
                    nr, nc = r, c
                s2 = index[(nr, nc)]
                P[s, a, s2] += prob
                R[s, a] += prob * entry_reward((nr, nc))

    initial = DiscreteDistribution.dirac(n, start)
    mdp = TabularMDP(transition=P, reward=R, discount=discount, initial=initial)
    embedding = StateEmbedding(np.array(cells, dtype=float))
    safe = np.array([s not in hazard_states for s in range(n)], dtype=float)
    risk = DiscreteDistribution.from_counts(safe)
    return Gridworld(
        spec=spec,
        mdp=mdp,
        embedding=embedding,
        risk=risk,
        state_cells=tuple(cells),
        start_state=start,
        goal_states=goal_states,
        hazard_states=hazard_states,
    )


# ---------------------------------------------------------------------------
# Induced-chain helpers
# ---------------------------------------------------------------------------

def policy_transition_matrix(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """State-to-state transition matrix of the chain induced by ``pi``."""
    if pi.n_states != mdp.n_states or pi.n_actions != mdp.n_actions:
        raise InvalidInputError("policy shape does not match the MDP")
    return np.einsum("sa,sat->st", pi.action_probs, mdp.transition)


def policy_rewards(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """Expected one-step reward per state under ``pi``."""
    return np.einsum("sa,sa->s", pi.action_probs, mdp.reward)


# ---------------------------------------------------------------------------
# State distributions
# ---------------------------------------------------------------------------

def stationary_distribution(
    mdp: TabularMDP,
    pi: Policy,
    damping: float = 1e-3,
    tol: float = 1e-10,
    max_squarings: int = 80,
) -> DiscreteDistribution:
    """Stationary distribution of the damped chain induced by ``pi``.

    The chain is ``(1 - damping) * P_pi + damping * restart-to-initial``;
    any positive damping makes the stationary distribution unique. Power
    iteration runs on the lazy kernel (I + P)/2 -- which shares the
    stationary set but is aperiodic, so damping 0 is allowed -- and is
    accelerated by repeated kernel squaring. Convergence is declared on the
    L1 fixed-point residual against the *damped* (non-lazy) chain.
    """
    if not 0.0 <= damping <= 0.1:
        raise InvalidInputError(f"damping must be in [0, 0.1], got {damping!r}")
    n = mdp.n_states
    P = policy_transition_matrix(mdp, pi)
    damped = (1.0 - damping) * P + damping * np.tile(mdp.initial.weights, (n, 1))
    lazy = 0.5 * (np.eye(n) + damped)
    p = mdp.initial.weights.copy()
    kernel = lazy
    for _ in range(max_squarings):
        p_next = p @ kernel
        residual = float(np.abs(p_next @ damped - p_next).sum())
        if residual <= tol:
            return DiscreteDistribution.from_counts(np.maximum(p_next, 0.0))
        kernel = kernel @ kernel
        p = p_next
    raise ConvergenceFailureError(
        "stationary distribution power iteration did not converge",
        residual=residual,
        iterations=max_squarings,
    )


def discounted_occupancy(mdp: TabularMDP, pi: Policy) -> DiscreteDistribution:
    """Normalized discounted state-occupancy measure under ``pi``.

    Solves rho = (1 - gamma) * initial + gamma * rho P_pi as a linear system
    and verifies the fixed-point residual.
    """
    gamma = mdp.discount
    P = policy_transition_matrix(mdp, pi)
    n = mdp.n_states
    rhs = (1.0 - gamma) * mdp.initial.weights
    rho = np.linalg.solve(np.eye(n) - gamma * P.T, rhs)
    residual = float(np.abs(rhs + gamma * (rho @ P) - rho).sum())
    if residual > 1e-10:
        raise ConvergenceFailureError(
            "discounted occupancy linear solve left a large residual",
            residual=residual,
            iterations=1,
        )
    return DiscreteDistribution.from_counts(np.maximum(rho, 0.0))


# ---------------------------------------------------------------------------
# Dynamic programming
# ---------------------------------------------------------------------------

def policy_evaluation(mdp: TabularMDP, pi: Policy, tol: float = 1e-8) -> np.ndarray:
    """Value vector of ``pi`` with sup-norm Bellman residual <= tol.

    Runs the affine fixed-point iteration V <- r + gamma P V with operator
    doubling, so 2^k plain sweeps cost k matrix squarings.
    """
    if tol <= 0:
        raise InvalidInputError(f"tol must be positive, got {tol!r}")
    P = policy_transition_matrix(mdp, pi)
    r = policy_rewards(mdp, pi)
    A = mdp.discount * P
    b = r.copy()
    V = np.zeros(mdp.n_states)
    for _ in range(80):
        V = A @ V + b
        residual = float(np.abs(r + mdp.discount * (P @ V) - V).max())
        if residual <= tol:
            return V
        b = A @ b + b
        A = A @ A
    raise ConvergenceFailureError(
        "policy evaluation did not reach tolerance", residual=residual, iterations=80
    )


def value_iteration(
    mdp: TabularMDP, tol: float = 1e-8, max_iter: int = 10**6
) -> tuple[np.ndarray, np.ndarray, Policy]:
    """Optimal values, optimal Q, and the greedy policy (ties: lowest index)."""
    if tol <= 0:
        raise InvalidInputError(f"tol must be positive, got {tol!r}")
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = mdp.reward + mdp.discount * np.einsum("sat,t->sa", mdp.transition, V)
        V_next = Q.max(axis=1)
        residual = float(np.abs(V_next - V).max())
        V = V_next
        if residual <= tol:
            break
    else:
        raise ConvergenceFailureError(
            "value iteration did not converge", residual=residual, iterations=max_iter
        )
    Q = mdp.reward + mdp.discount * np.einsum("sat,t->sa", mdp.transition, V)
    greedy = Policy.deterministic(Q.argmax(axis=1), mdp.n_actions)
    return V, Q, greedy


def enumerate_deterministic_policies(mdp: TabularMDP) -> Iterator[Policy]:
    """All deterministic policies, lexicographic in the action-index tuple.

    Raises:
        EnumerationTooLargeError: if n_actions ** n_states exceeds 10**6.
    """
    count = mdp.n_actions**mdp.n_states
    if count > ENUMERATION_GUARD:
        raise EnumerationTooLargeError(
            f"{mdp.n_actions}^{mdp.n_states} = {count} deterministic policies "
            f"exceeds the brute-force guard of {ENUMERATION_GUARD}"
        )
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        yield Policy.deterministic(np.array(actions), mdp.n_actions)
