"""Dense transportation simplex with dual potentials.

Solves  min <X, C>  over  X >= 0,  X @ 1 = a,  X.T @ 1 = b  for strictly
positive marginals a, b with equal total mass. The basis is maintained as a
spanning tree on the bipartite node set (rows 0..m-1, columns m..m+n-1),
which makes duals and pivot cycles cheap to derive. Designed for the small,
dense instances this package works with (tens of states), not for sparse
large-scale problems.

Pivoting: entering cell with the most negative reduced cost, ties broken by
lowest (i, j); leaving cell with the smallest flow among the cycle's minus
arcs, ties again by lowest (i, j). After a long streak of degenerate pivots
the entering rule falls back to Bland's rule (first negative reduced cost in
index order), which guarantees termination.
"""

from __future__ import annotations

import numpy as np

from .errors import SolverFailureError

# Reduced costs above -_OPT_TOL * scale count as nonnegative (optimality).
_OPT_TOL = 1e-12
# Flows below this are treated as zero when classifying degenerate pivots.
_FLOW_TOL = 1e-15


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible solution with exactly m + n - 1 basic cells."""
    m, n = len(a), len(b)
    flow = np.zeros((m, n))
    basis: list[tuple[int, int]] = []
    arem = a.astype(float).copy()
    brem = b.astype(float).copy()
    i = j = 0
    for step in range(m + n - 1):
        f = min(arem[i], brem[j])
        flow[i, j] = f
        basis.append((i, j))
        arem[i] -= f
        brem[j] -= f
        if step == m + n - 2:
            break
        # On ties prefer advancing the row; the stalled cell of the next step
        # enters the basis with zero flow, keeping the count at m + n - 1.
        if arem[i] <= brem[j] and i < m - 1:
            i += 1
        elif j < n - 1:
            j += 1
        else:
            i += 1
    return flow, basis


def _adjacency(basis, m: int, n: int):
    adj: list[list[tuple[int, tuple[int, int]]]] = [[] for _ in range(m + n)]
    for (i, j) in basis:
        adj[i].append((m + j, (i, j)))
        adj[m + j].append((i, (i, j)))
    return adj


def _duals(adj, C, m: int, n: int):
    """Potentials u, v with u[i] + v[j] = C[i, j] on every basic cell."""
    u = np.zeros(m)
    v = np.zeros(n)
    seen = [False] * (m + n)
    seen[0] = True  # root the tree at row 0 with u[0] = 0
    queue = [0]
    head = 0
    while head < len(queue):
        node = queue[head]
        head += 1
        for (nxt, (i, j)) in adj[node]:
            if seen[nxt]:
                continue
            seen[nxt] = True
            if nxt < m:
                u[nxt] = C[i, j] - v[j]
            else:
                v[nxt - m] = C[i, j] - u[i]
            queue.append(nxt)
    return u, v


def _cycle(adj, entering, m: int):
    """Cells of the unique cycle closed by ``entering``, signs alternating.

    The returned list starts with ``entering`` (the plus arc); cells at odd
    positions are the minus arcs whose flow drops as the entering flow grows.
    """
    ei, ej = entering
    target = m + ej
    parent: dict[int, tuple[int, tuple[int, int] | None]] = {ei: (-1, None)}
    stack = [ei]
    while stack:
        node = stack.pop()
        if node == target:
            break
        for (nxt, cell) in adj[node]:
            if nxt not in parent:
                parent[nxt] = (node, cell)
                stack.append(nxt)
    # Walk back from the entering cell's column node to its row node; this
    # order makes consecutive cells share a node, so signs alternate cleanly.
    cells = [entering]
    node = target
    while node != ei:
        prev, cell = parent[node]
        cells.append(cell)
        node = prev
    return cells


def solve_transport(a, b, C, max_pivots: int | None = None):
    """Solve the transportation LP; marginals must be strictly positive.

    Returns ``(flow, u, v, pivots)`` where ``flow`` is the optimal plan and
    ``(u, v)`` are optimal dual potentials satisfying
    ``u[i] + v[j] <= C[i, j]`` everywhere with equality on basic cells.

    Raises:
        SolverFailureError: pivot budget exhausted before optimality.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = len(a), len(b)
    # Guard against accumulated rounding in the marginal sums.
    b = b * (a.sum() / b.sum())
    flow, basis = _northwest_corner(a, b)
    if max_pivots is None:
        max_pivots = max(1000, 20 * (m + n) ** 2)

    opt_tol = _OPT_TOL * max(1.0, float(np.abs(C).max()))
    degenerate_streak = 0
    bland = False
    basis_set = set(basis)

    for pivot in range(max_pivots + 1):
        adj = _adjacency(basis, m, n)
        u, v = _duals(adj, C, m, n)
        reduced = C - u[:, None] - v[None, :]
        for (i, j) in basis:
            reduced[i, j] = 0.0
        if bland:
            neg = np.argwhere(reduced < -opt_tol)
            if len(neg) == 0:
                return flow, u, v, pivot
            ei, ej = map(int, neg[0])  # argwhere is row-major: lowest (i, j)
        else:
            flat = int(np.argmin(reduced))  # first minimum in row-major order
            ei, ej = divmod(flat, n)
            if reduced[ei, ej] >= -opt_tol:
                return flow, u, v, pivot

        cycle = _cycle(adj, (ei, ej), m)
        minus = cycle[1::2]
        pick = min(range(len(minus)), key=lambda k: (flow[minus[k]], minus[k]))
        leaving = minus[pick]
        theta = flow[leaving]

        for k, cell in enumerate(cycle):
            flow[cell] += theta if k % 2 == 0 else -theta
        flow[leaving] = 0.0

        basis_set.remove(leaving)
        basis_set.add((ei, ej))
        basis = sorted(basis_set)

        if theta <= _FLOW_TOL:
            degenerate_streak += 1
            if degenerate_streak > 2 * (m + n):
                bland = True  # anti-cycling fallback
        else:
            degenerate_streak = 0

    raise SolverFailureError("transportation simplex did not converge", max_pivots)
