"""Exact Wasserstein-1 distances.

* ``w1_empirical``: equal-size uniform point clouds, via an optimal assignment.
* ``w1_discrete``: arbitrary finite distributions, via the transportation
  simplex (MODI potentials, Bland's lowest-index rule), returning the coupling
  and the dual potentials ``f``, ``g`` with ``f[i] + g[j] <= cost[i, j]``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

METRICS = ("euclidean", "manhattan", "discrete")
_ALIASES = {"euclid": "euclidean", "l2": "euclidean", "cityblock": "manhattan", "l1": "manhattan"}


def canonical_metric(metric: str) -> str:
    name = _ALIASES.get(metric, metric)
    if name not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return name


def pairwise_cost(a, b, metric: str = "euclidean") -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    metric = canonical_metric(metric)
    if metric == "euclidean":
        return cdist(a, b, "euclidean")
    if metric == "manhattan":
        return cdist(a, b, "cityblock")
    return (a[:, None, :] != b[None, :, :]).any(axis=2).astype(np.float64)


@dataclass
class DiscreteDistribution:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.float64)
        if self.support.ndim == 1:
            self.support = self.support[:, None]
        self.probs = check_probs(self.probs, tol=1e-12)
        if len(self.probs) != len(self.support):
            raise ValueError(f"{len(self.probs)} probabilities for {len(self.support)} support points")


def check_probs(p, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.size == 0 or not np.isfinite(p).all() or (p < 0).any():
        raise ValueError("probabilities must be a non-empty, finite, non-negative vector")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum():.15g}, not 1")
    return p


@dataclass
class TransportPlan:
    plan: np.ndarray
    value: float
    f: np.ndarray
    g: np.ndarray
    iterations: int = 0

    @property
    def dual_value(self) -> float:
        return float(self.plan.sum(axis=1) @ self.f + self.plan.sum(axis=0) @ self.g)


# ------------------------------------------------------------ point clouds

def w1_empirical(a, b, metric: str = "euclidean") -> float:
    """W1 between two uniform clouds of equal size (mean optimal matching cost)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if len(a) != len(b):
        raise ValueError(f"point clouds must have equal size, got {len(a)} and {len(b)}")
    if len(a) == 0:
        raise ValueError("point clouds must be non-empty")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("point clouds contain non-finite coordinates")
    cost = pairwise_cost(a, b, metric)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


# ---------------------------------------------------- transportation simplex

def _northwest_corner(a: np.ndarray, b: np.ndarray):
    m, n = len(a), len(b)
    plan = np.zeros((m, n))
    basis = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        plan[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        # exactly one index advances per cell, so the basis has m + n - 1 cells
        if j == n - 1 or (i < m - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    return plan, basis


def _potentials(basis, m: int, n: int, cost: np.ndarray):
    adj: list[list[int]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for other in adj[node]:
            if node < m:
                j = other - m
                if np.isnan(v[j]):
                    v[j] = cost[node, j] - u[node]
                    queue.append(other)
            else:
                i = other
                if np.isnan(u[i]):
                    u[i] = cost[i, node - m] - v[node - m]
                    queue.append(other)
    if np.isnan(u).any() or np.isnan(v).any():
        raise RuntimeError("transportation basis is not a spanning tree")
    return u, v, adj


def _tree_path(adj, start: int, goal: int) -> list[int]:
    parent = {start: start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for other in adj[node]:
            if other not in parent:
                parent[other] = node
                queue.append(other)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def w1_discrete(a, b, cost, max_iter: int = 100_000) -> TransportPlan:
    """Exact optimal transport between probability vectors ``a`` and ``b``."""
    if isinstance(a, DiscreteDistribution):
        a = a.probs
    if isinstance(b, DiscreteDistribution):
        b = b.probs
    a, b = check_probs(a), check_probs(b)
    cost = np.asarray(cost, dtype=np.float64)
    m, n = len(a), len(b)
    if cost.shape != (m, n):
        raise ValueError(f"cost matrix {cost.shape} does not match supports ({m}, {n})")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")

    plan, basis = _northwest_corner(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    tol = 1e-12 * max(1.0, float(np.abs(cost).max()))
    it = 0
    while True:
        u, v, adj = _potentials(basis, m, n, cost)
        reduced = cost - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            break
        it += 1
        if it > max_iter:
            raise RuntimeError(f"transportation simplex did not converge in {max_iter} pivots")
        r, s = divmod(int(entering[0]), n)
        # tree path from column s back to row r closes the cycle with (r, s)
        path = _tree_path(adj, m + s, r)
        cycle = [(r, s)]
        for p, q in zip(path[:-1], path[1:]):
            cycle.append((q, p - m) if p >= m else (p, q - m))
        minus = cycle[1::2]
        theta = min(plan[c] for c in minus)
        leaving = min((c for c in minus if plan[c] == theta), key=lambda c: c[0] * n + c[1])
        for k, c in enumerate(cycle):
            plan[c] += theta if k % 2 == 0 else -theta
        plan[leaving] = 0.0
        basis.remove(leaving)
        basis.append((r, s))
        in_basis[leaving] = False
        in_basis[r, s] = True
    np.clip(plan, 0.0, None, out=plan)
    value = float((plan * cost).sum())
    return TransportPlan(plan=plan, value=value, f=u, g=v, iterations=it)


def w1_between_points(a_probs, b_probs, support_a, support_b, metric: str = "euclidean") -> TransportPlan:
    return w1_discrete(a_probs, b_probs, pairwise_cost(support_a, support_b, metric))
