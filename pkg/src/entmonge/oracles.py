"""Brute-force references: exact transportation LP, tiny exact EOT, log moments.

Nothing here shares code with the Sinkhorn solver; these routines exist to
check it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetExceeded,
    CoincidentAtoms,
    InfeasibleSupport,
    InfiniteCostUnsupported,
    UnbalancedMasses,
)
from .measures import DiscreteMeasure, Plan

TINY_MAX = 8


@dataclass
class LPResult:
    value: float
    plan: Plan
    basis_size: int
    pivots: int = 0


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    n, m = len(a), len(b)
    x = np.zeros((n, m))
    basis = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        x[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1 or (i < n - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    return x, basis


def _tree_path(adj, start, goal):
    """Node path from ``start`` to ``goal`` in the basis tree."""
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in sorted(adj[node]):
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def lp_ot(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, max_pivots: int = 1_000_000) -> LPResult:
    """Exact discrete OT by the transportation simplex.

    Starts from the north-west corner basis and pivots with Bland's rule:
    the entering cell is the first improving cell in row-major order, the
    leaving cell the lexicographically smallest blocking cell. Both choices
    are deterministic, so the returned vertex is reproducible.
    """
    a = np.asarray(mu.weights, dtype=float)
    b = np.asarray(nu.weights, dtype=float)
    C = np.asarray(cost, dtype=float)
    if abs(a.sum() - b.sum()) > 1e-12:
        raise UnbalancedMasses(f"masses {a.sum()!r} and {b.sum()!r} differ")
    if not np.all(np.isfinite(C)):
        raise InfiniteCostUnsupported("lp_ot needs a finite cost matrix")
    n, m = C.shape
    x, basis_list = _northwest_corner(a, b)
    basis = set(basis_list)
    # nodes: rows 0..n-1, columns n..n+m-1
    adj = {k: set() for k in range(n + m)}
    for i, j in basis:
        adj[i].add(n + j)
        adj[n + j].add(i)
    tol = 1e-12 * max(1.0, float(np.abs(C).max(initial=0.0)))
    pivots = 0
    while pivots < max_pivots:
        u = np.full(n, np.nan)
        v = np.full(m, np.nan)
        u[0] = 0.0
        queue = deque([0])
        while queue:
            node = queue.popleft()
            for nb in adj[node]:
                if node < n:
                    j = nb - n
                    if np.isnan(v[j]):
                        v[j] = C[node, j] - u[node]
                        queue.append(nb)
                else:
                    if np.isnan(u[nb]):
                        u[nb] = C[nb, node - n] - v[node - n]
                        queue.append(nb)
        reduced = C - u[:, None] - v[None, :]
        cand = np.flatnonzero(reduced.ravel() < -tol)
        if cand.size == 0:
            break
        ei, ej = divmod(int(cand[0]), m)
        path = _tree_path(adj, n + ej, ei)
        # edges along the path from column ej back to row ei alternate -, +, -, ...
        edges = []
        for k in range(len(path) - 1):
            p, q = path[k], path[k + 1]
            cell = (q, p - n) if p >= n else (p, q - n)
            edges.append(cell)
        minus = edges[0::2]
        plus = edges[1::2]
        theta = min(x[c] for c in minus)
        leaving = min(c for c in minus if x[c] <= theta)
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[ei, ej] = theta
        x[leaving] = 0.0
        basis.remove(leaving)
        adj[leaving[0]].discard(n + leaving[1])
        adj[n + leaving[1]].discard(leaving[0])
        basis.add((ei, ej))
        adj[ei].add(n + ej)
        adj[n + ej].add(ei)
        pivots += 1
    x = np.maximum(x, 0.0)
    plan = Plan(mu, nu, x, tol_marginal=1e-10)
    return LPResult(value=float(np.sum(x * C)), plan=plan, basis_size=len(basis), pivots=pivots)


def tiny_eot(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, eps: float, tol: float = 1e-14,
             max_iter: int = 2_000_000, return_duals: bool = False):
    """Entropic OT on at most 8x8 atoms by matrix scaling in extended precision.

    Scales the Gibbs kernel ``mu_i nu_j exp(-c_ij / eps)`` in ``np.longdouble``
    with alternating exact row and column projections. Progress is checked in
    blocks of 128 sweeps; the loop stops once the L1 marginal error is below
    ``tol`` or a block brings no improvement.
    """
    C = np.asarray(cost, dtype=float)
    n, m = C.shape
    if n > TINY_MAX or m > TINY_MAX:
        raise BudgetExceeded(f"tiny_eot handles at most {TINY_MAX}x{TINY_MAX}")
    ld = np.longdouble
    r = np.asarray(mu.weights, dtype=ld)
    c = np.asarray(nu.weights, dtype=ld)
    K = np.zeros((n, m), dtype=ld)
    fin = np.isfinite(C)
    K[fin] = np.exp(-C[fin].astype(ld) / ld(eps))
    K *= r[:, None] * c[None, :]
    if np.any((K.sum(axis=1) == 0) & (r > 0)) or np.any((K.sum(axis=0) == 0) & (c > 0)):
        raise InfeasibleSupport("a row or column has no admissible entry")
    a = np.ones(n, dtype=ld)
    b = np.ones(m, dtype=ld)
    best = math.inf
    it = 0
    while it < max_iter:
        for _ in range(128):
            a = np.where(r > 0, r / (K @ b), 0)
            b = np.where(c > 0, c / (K.T @ a), 0)
        it += 128
        P = a[:, None] * K * b[None, :]
        err = float(np.abs(P.sum(axis=1) - r).sum() + np.abs(P.sum(axis=0) - c).sum())
        if err <= tol or err >= best:
            break
        best = err
    P = a[:, None] * K * b[None, :]
    plan = Plan(mu, nu, P.astype(float), tol_marginal=1e-12)
    if return_duals:
        with np.errstate(divide="ignore"):
            u = (ld(eps) * np.log(a)).astype(float)
            v = (ld(eps) * np.log(b)).astype(float)
        return plan, u, v
    return plan


def tiny_eot_objective(plan: Plan, cost, eps: float) -> float:
    """``<gamma, c> + eps * H(gamma | mu x nu)`` summed in extended precision."""
    ld = np.longdouble
    P = plan.todense().astype(ld)
    C = np.asarray(cost, dtype=float)
    ref = np.outer(plan.row.weights, plan.col.weights).astype(ld)
    pos = P > 0
    lin = np.sum(P[pos] * C[pos].astype(ld))
    ent = np.sum(P[pos] * np.log(P[pos] / ref[pos]))
    return float(lin + ld(eps) * ent)


def quad_log_moment(kappa: Plan) -> float:
    """``sum_ij kappa_ij log(2 pi |s_i - t_j|)`` by dense summation over 1D atoms."""
    s = kappa.row.points[:, 0]
    t = kappa.col.points[:, 0]
    if np.any(s[:, None] == t[None, :]):
        raise CoincidentAtoms("source and target atoms coincide")
    K = kappa.todense()
    return float(np.sum(K * np.log(2.0 * math.pi * np.abs(s[:, None] - t[None, :]))))
