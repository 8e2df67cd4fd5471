"""Discrete optimal transport over finite state spaces.

Domain types (:class:`DiscreteDistribution`, :class:`CostMatrix`,
:class:`TransportPlan`, :class:`OTSolution`) plus the solver surface:

* :func:`build_cost_matrix` -- squared-Euclidean ground cost from embeddings.
* :func:`solve_exact` -- transportation simplex, exact plan and duals.
* :func:`solve_regularized` -- entropic iterative scaling, log-domain.
* :func:`ot_distance` -- cost of the exact optimal plan.
* :func:`pointwise_risk_cost` -- transport cost from a single state's Dirac
  measure to a target distribution (the coupling is forced, so it is a sum).

All operations are pure functions of their arguments; the array payloads of
the domain types are frozen (non-writeable) after validation, so values can
be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConvergenceFailureError, InvalidInputError
from .simplex import solve_transport

# Construction rejects weight vectors whose sum deviates from 1 by more than
# this; anything closer is silently renormalized.
SUM_TOLERANCE = 1e-9
MARGINAL_ATOL = 1e-9

DEFAULT_SINKHORN_TOL = 1e-9
DEFAULT_SINKHORN_MAX_ITER = 10_000


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector over state indices 0..n-1.

    Weights must be nonnegative and sum to 1 within ``SUM_TOLERANCE``;
    construction renormalizes so the stored sum is exact to ~1e-16. Use
    :meth:`from_counts` for raw nonnegative data of arbitrary scale.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise InvalidInputError("weights must be a nonempty 1-D vector")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("weights must be finite")
        if np.any(w < 0):
            raise InvalidInputError("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidInputError(
                f"weights sum to {total!r}, deviating from 1 by more than {SUM_TOLERANCE}"
            )
        object.__setattr__(self, "weights", _frozen(w / total))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, n: int, state: int) -> "DiscreteDistribution":
        if not 0 <= state < n:
            raise InvalidInputError(f"dirac state {state} out of range for n={n}")
        w = np.zeros(n)
        w[state] = 1.0
        return cls(w)

    @classmethod
    def from_counts(cls, counts) -> "DiscreteDistribution":
        """Normalize an arbitrary nonnegative vector (e.g. visit counts)."""
        c = np.asarray(counts, dtype=float)
        if np.any(c < 0):
            raise InvalidInputError("counts must be nonnegative")
        total = c.sum()
        if total <= 0:
            raise InvalidInputError("counts sum to zero; cannot normalize")
        return cls(c / total)


@dataclass(frozen=True)
class CostMatrix:
    """Nonnegative n-by-n ground cost. c[i, j] = cost of moving mass i -> j.

    Symmetry and a zero diagonal are guaranteed when built from an embedding
    (see :func:`build_cost_matrix`) but are not required in general.
    """

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] == 0:
            raise InvalidInputError("cost matrix must be square and nonempty")
        if not np.all(np.isfinite(e)):
            raise InvalidInputError("cost entries must be finite")
        if np.any(e < 0):
            raise InvalidInputError("cost entries must be nonnegative")
        object.__setattr__(self, "entries", _frozen(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class TransportPlan:
    """Coupling matrix; row sums follow the source, column sums the target."""

    coupling: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.coupling, dtype=float)
        if p.ndim != 2:
            raise InvalidInputError("coupling must be a matrix")
        if np.any(p < -1e-12):
            raise InvalidInputError("coupling entries must be nonnegative")
        p = np.maximum(p, 0.0)  # absorb -0.0 / rounding dust
        object.__setattr__(self, "coupling", _frozen(p))

    @property
    def row_marginal(self) -> np.ndarray:
        return self.coupling.sum(axis=1)

    @property
    def col_marginal(self) -> np.ndarray:
        return self.coupling.sum(axis=0)

    def check_marginals(
        self,
        mu: DiscreteDistribution,
        nu: DiscreteDistribution,
        atol: float = MARGINAL_ATOL,
    ) -> None:
        """Raise unless every row/column sum matches its marginal within atol."""
        row_err = np.abs(self.row_marginal - mu.weights).max()
        col_err = np.abs(self.col_marginal - nu.weights).max()
        if row_err > atol or col_err > atol:
            raise InvalidInputError(
                f"plan marginals off by (rows {row_err:.3e}, cols {col_err:.3e}), "
                f"tolerance {atol:.1e}"
            )


@dataclass(frozen=True)
class OTSolution:
    """A solved transport instance.

    ``cost`` is always the entrywise inner product of ``plan`` and the cost
    matrix. When ``exact`` is set, ``dual_source``/``dual_target`` are optimal
    LP potentials (feasible, zero duality gap); for the regularized solver
    they are the entropic potentials and carry no feasibility guarantee.
    ``iterations`` counts simplex pivots or scaling sweeps respectively.
    """

    plan: TransportPlan
    cost: float
    dual_source: np.ndarray
    dual_target: np.ndarray
    iterations: int
    exact: bool

    def __post_init__(self):
        object.__setattr__(
            self, "dual_source", _frozen(np.asarray(self.dual_source, dtype=float))
        )
        object.__setattr__(
            self, "dual_target", _frozen(np.asarray(self.dual_target, dtype=float))
        )

    @property
    def dual_objective(self) -> float:
        """mu . u + nu . v, evaluated against the plan's own marginals."""
        return float(
            self.plan.row_marginal @ self.dual_source
            + self.plan.col_marginal @ self.dual_target
        )


# ---------------------------------------------------------------------------
# Ground cost construction
# ---------------------------------------------------------------------------

def _embedding_coords(embedding) -> np.ndarray:
    """Accept an (n, d) array, a mapping {state: vector}, or an object with
    a ``coords`` attribute, and return a validated (n, d) float array."""
    coords = getattr(embedding, "coords", embedding)
    if isinstance(coords, Mapping):
        if len(coords) == 0:
            raise InvalidInputError("embedding is empty")
        keys = sorted(coords)
        if keys != list(range(len(keys))):
            raise InvalidInputError("embedding keys must be 0..n-1")
        rows = [np.atleast_1d(np.asarray(coords[k], dtype=float)) for k in keys]
        dims = {r.shape for r in rows}
        if len(dims) != 1 or rows[0].ndim != 1:
            raise InvalidInputError(f"embedding vectors have mixed shapes: {dims}")
        coords = np.stack(rows)
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    if coords.ndim != 2 or coords.shape[0] == 0 or coords.shape[1] == 0:
        raise InvalidInputError("embedding must be a nonempty (n, d) array")
    if not np.all(np.isfinite(coords)):
        raise InvalidInputError("embedding coordinates must be finite")
    return coords


def build_cost_matrix(embedding, normalize: bool = False) -> CostMatrix:
    """Squared Euclidean ground cost between state embeddings.

    ``embedding`` may be an (n, d) array, a mapping from state index to a
    fixed-dimension vector, or any object exposing ``coords``. The result is
    symmetric with a zero diagonal. With ``normalize`` the matrix is divided
    by its maximum entry so that penalty weights are comparable across
    environments of different physical scale.
    """
    coords = _embedding_coords(embedding)
    diff = coords[:, None, :] - coords[None, :, :]
    entries = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(entries, 0.0)
    entries = np.maximum(entries, 0.0)
    if normalize:
        top = entries.max()
        if top > 0:
            entries = entries / top
    return CostMatrix(entries)


# ---------------------------------------------------------------------------
# Exact solver
# ---------------------------------------------------------------------------

def _check_dims(mu: DiscreteDistribution, nu: DiscreteDistribution, C: CostMatrix):
    if not (mu.n == nu.n == C.n):
        raise InvalidInputError(
            f"dimension mismatch: mu has {mu.n}, nu has {nu.n}, cost has {C.n}"
        )


def solve_exact(
    mu: DiscreteDistribution,
    nu: DiscreteDistribution,
    C: CostMatrix,
    max_pivots: int | None = None,
) -> OTSolution:
    """Minimize <plan, C> over couplings of (mu, nu) by transportation simplex.

    Zero-weight states are excluded from the LP and re-inserted as zero rows
    and columns of the plan; their dual entries are filled with the tightest
    feasible values so dual feasibility holds on the full index set.
    """
    _check_dims(mu, nu, C)
    n = mu.n
    rows = np.flatnonzero(mu.weights > 0.0)
    cols = np.flatnonzero(nu.weights > 0.0)
    sub_cost = C.entries[np.ix_(rows, cols)]
    flow, u_sub, v_sub, pivots = solve_transport(
        mu.weights[rows], nu.weights[cols], sub_cost, max_pivots=max_pivots
    )

    plan = np.zeros((n, n))
    plan[np.ix_(rows, cols)] = flow
    u = np.empty(n)
    v = np.empty(n)
    u[rows] = u_sub
    v[cols] = v_sub
    # Fill excluded duals at their feasibility bound: they carry zero mass,
    # so any feasible value keeps the dual objective and the gap unchanged.
    missing_rows = np.setdiff1d(np.arange(n), rows, assume_unique=True)
    if missing_rows.size:
        u[missing_rows] = (C.entries[np.ix_(missing_rows, cols)] - v[cols]).min(axis=1)
    missing_cols = np.setdiff1d(np.arange(n), cols, assume_unique=True)
    if missing_cols.size:
        v[missing_cols] = (C.entries[:, missing_cols] - u[:, None]).min(axis=0)

    cost = float(np.sum(plan * C.entries))
    return OTSolution(
        plan=TransportPlan(plan),
        cost=cost,
        dual_source=u,
        dual_target=v,
        iterations=pivots,
        exact=True,
    )


def ot_distance(
    mu: DiscreteDistribution, nu: DiscreteDistribution, C: CostMatrix
) -> float:
    """Exact optimal transport cost between two distributions."""
    return solve_exact(mu, nu, C).cost


def pointwise_risk_cost(s: int, p_r: DiscreteDistribution, C: CostMatrix) -> float:
    """Transport cost from the Dirac measure at ``s`` to ``p_r``.

    The coupling polytope of (Dirac(s), p_r) has a single element, so the
    cost reduces to sum_j C[s, j] * p_r[j].
    """
    if not 0 <= s < C.n:
        raise InvalidInputError(f"state {s} out of range for n={C.n}")
    if p_r.n != C.n:
        raise InvalidInputError(f"dimension mismatch: p_r has {p_r.n}, cost has {C.n}")
    return float(C.entries[s] @ p_r.weights)


# ---------------------------------------------------------------------------
# Entropic regularized solver
# ---------------------------------------------------------------------------

def _log_scaling_sweeps(a, b, C, eps, f, g, max_iter, tol, check_every):
    """Alternating log-domain scaling until the marginal L1 residual <= tol.

    Returns updated potentials, sweeps used, and the final residual. Working
    in the log domain throughout subsumes the classic overflow/underflow
    absorption trick: potentials stay bounded for arbitrarily small eps.
    """
    loga = np.log(a)
    logb = np.log(b)
    it = 0
    residual = np.inf
    while it < max_iter:
        it += 1
        A = (g[None, :] - C) / eps
        mx = A.max(axis=1)
        f = eps * (loga - (mx + np.log(np.exp(A - mx[:, None]).sum(axis=1))))
        B = (f[:, None] - C) / eps
        mxb = B.max(axis=0)
        g = eps * (logb - (mxb + np.log(np.exp(B - mxb[None, :]).sum(axis=0))))
        if it % check_every == 0:
            P = np.exp((f[:, None] + g[None, :] - C) / eps)
            residual = max(
                float(np.abs(P.sum(axis=1) - a).sum()),
                float(np.abs(P.sum(axis=0) - b).sum()),
            )
            if residual <= tol:
                return f, g, it, residual
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    residual = max(
        float(np.abs(P.sum(axis=1) - a).sum()),
        float(np.abs(P.sum(axis=0) - b).sum()),
    )
    return f, g, it, residual


def solve_regularized(
    mu: DiscreteDistribution,
    nu: DiscreteDistribution,
    C: CostMatrix,
    epsilon: float | None = None,
    max_iter: int = DEFAULT_SINKHORN_MAX_ITER,
    tol: float = DEFAULT_SINKHORN_TOL,
) -> OTSolution:
    """Entropic approximation of the OT plan by alternating marginal scaling.

    ``epsilon`` defaults to ``1e-2 * max(C)``. For targets far below the cost
    scale the solve warm-starts from a short ladder of larger epsilons, which
    keeps sweep counts manageable; all sweeps count against ``max_iter``.
    Zero-weight states are removed before scaling and restored as zero rows
    and columns. Dual entries are the entropic potentials (zero on removed
    states); they are not LP-feasible certificates.

    Raises:
        ConvergenceFailureError: residual still above ``tol`` at the cap.
    """
    _check_dims(mu, nu, C)
    if epsilon is None:
        epsilon = 1e-2 * float(C.entries.max())
    if not (epsilon > 0):
        raise InvalidInputError(f"epsilon must be positive, got {epsilon!r}")
    if tol <= 0:
        raise InvalidInputError(f"tol must be positive, got {tol!r}")
    if max_iter < 1:
        raise InvalidInputError(f"max_iter must be >= 1, got {max_iter!r}")

    n = mu.n
    rows = np.flatnonzero(mu.weights > 0.0)
    cols = np.flatnonzero(nu.weights > 0.0)
    a = mu.weights[rows]
    b = nu.weights[cols]
    Csub = C.entries[np.ix_(rows, cols)]

    f = np.zeros(len(rows))
    g = np.zeros(len(cols))
    used = 0
    top = float(Csub.max()) if Csub.size else 0.0
    if top > 0 and epsilon < 0.1 * top:
        # Anneal: coarse, loosely-converged solves seed the target epsilon.
        eps_cur = 0.1 * top
        while eps_cur > 4.0 * epsilon and used < max_iter:
            f, g, it, _ = _log_scaling_sweeps(
                a, b, Csub, eps_cur, f, g,
                max_iter=min(400, max_iter - used), tol=1e-5, check_every=5,
            )
            used += it
            eps_cur /= 4.0

    f, g, it, residual = _log_scaling_sweeps(
        a, b, Csub, epsilon, f, g,
        max_iter=max_iter - used, tol=tol, check_every=10,
    )
    used += it
    if residual > tol:
        raise ConvergenceFailureError(
            "regularized transport did not reach the marginal tolerance; "
            "a larger epsilon or max_iter may be needed",
            residual=residual,
            iterations=used,
        )

    plan = np.zeros((n, n))
    plan[np.ix_(rows, cols)] = np.exp((f[:, None] + g[None, :] - Csub) / epsilon)
    dual_source = np.zeros(n)
    dual_target = np.zeros(n)
    dual_source[rows] = f
    dual_target[cols] = g
    cost = float(np.sum(plan * C.entries))
    return OTSolution(
        plan=TransportPlan(plan),
        cost=cost,
        dual_source=dual_source,
        dual_target=dual_target,
        iterations=used,
        exact=False,
    )
