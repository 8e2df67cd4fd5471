"""Shared fixtures and independent oracles.

The OT oracle here deliberately shares no code with the package solver: it
enumerates basic feasible solutions of the transportation polytope (supports
that form spanning trees of the bipartite graph) and minimizes over them.
"""

import itertools

import numpy as np
import pytest

import otrl


def vertex_enumeration_ot(a, b, C, tol=1e-12):
    """Minimum cost over all vertices of the transportation polytope.

    Only usable for small m, n (the 3x3 case has 126 candidate supports).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = len(a), len(b)
    cells = [(i, j) for i in range(m) for j in range(n)]
    best = None
    k = m + n - 1
    for support in itertools.combinations(cells, k):
        parent = list(range(m + n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        acyclic = True
        for (i, j) in support:
            ri, rj = find(i), find(m + j)
            if ri == rj:
                acyclic = False
                break
            parent[ri] = rj
        if not acyclic or len({find(x) for x in range(m + n)}) != 1:
            continue

        # Solve the flow equations by repeated leaf elimination.
        arem = a.copy()
        brem = b.copy()
        adj = {x: [] for x in range(m + n)}
        for cell in support:
            i, j = cell
            adj[i].append((m + j, cell))
            adj[m + j].append((i, cell))
        degree = {x: len(adj[x]) for x in range(m + n)}
        removed = set()
        flows = {}
        leaves = [x for x in range(m + n) if degree[x] == 1]
        while leaves:
            x = leaves.pop()
            edge = next(((y, c) for (y, c) in adj[x] if c not in removed), None)
            if edge is None:
                continue
            y, cell = edge
            i, j = cell
            if x < m:
                f = arem[x]
                brem[j] -= f
            else:
                f = brem[x - m]
                arem[i] -= f
            flows[cell] = f
            removed.add(cell)
            degree[x] -= 1
            degree[y] -= 1
            if degree[y] == 1:
                leaves.append(y)
        if len(flows) != k or any(f < -tol for f in flows.values()):
            continue
        cost = sum(f * C[cell] for cell, f in flows.items())
        if best is None or cost < best:
            best = cost
    return best


def random_feasible_plans(rng, a, b, count, sweeps=80):
    """Random couplings projected onto the polytope by alternating scaling."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    plans = rng.random((count, len(a), len(b))) + 1e-3
    for _ in range(sweeps):
        rows = plans.sum(axis=2)
        plans *= np.where(rows > 0, a / np.where(rows > 0, rows, 1.0), 0.0)[:, :, None]
        cols = plans.sum(axis=1)
        plans *= np.where(cols > 0, b / np.where(cols > 0, cols, 1.0), 0.0)[:, None, :]
    return plans


def random_ot_instance(rng, max_n=16, allow_zeros=True):
    """Generic random instance: Dirichlet marginals on random embeddings."""
    n = int(rng.integers(2, max_n + 1))
    d = int(rng.integers(1, 3))
    points = rng.random((n, d))
    a = rng.dirichlet(np.ones(n))
    b = rng.dirichlet(np.ones(n))
    if allow_zeros and n > 3 and rng.random() < 0.3:
        a = a.copy()
        a[int(rng.integers(n))] = 0.0
        a = a / a.sum()
        b = b.copy()
        b[int(rng.integers(n))] = 0.0
        b = b / b.sum()
    return (
        otrl.DiscreteDistribution(a),
        otrl.DiscreteDistribution(b),
        otrl.build_cost_matrix(points),
    )


def separated_ot_instance(rng, max_n=32):
    """Random instance whose marginals favor opposite ends of the embedding,
    so the transport cost is a solid fraction of the cost scale."""
    n = int(rng.integers(4, max_n + 1))
    d = int(rng.integers(1, 3))
    points = rng.random((n, d))
    direction = rng.normal(size=d)
    t = points @ direction
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    a = rng.dirichlet(np.full(n, 0.8)) * np.exp(-4.0 * t)
    b = rng.dirichlet(np.full(n, 0.8)) * np.exp(4.0 * t)
    return (
        otrl.DiscreteDistribution(a / a.sum()),
        otrl.DiscreteDistribution(b / b.sum()),
        otrl.build_cost_matrix(points),
    )


@pytest.fixture
def pinned_instance():
    """The 3-state regression instance; exact cost pinned at 0.6 by the
    vertex-enumeration oracle (re-derived in test_transport)."""
    mu = otrl.DiscreteDistribution(np.array([0.5, 0.3, 0.2]))
    nu = otrl.DiscreteDistribution(np.array([0.2, 0.3, 0.5]))
    C = otrl.build_cost_matrix(np.array([0.0, 1.0, 2.0]))
    return mu, nu, C


PINNED_N3_COST = 0.6
