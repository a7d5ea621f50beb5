"""Exact minimum-cost assignment between label instances and prediction
branches, plus a brute-force permutation oracle used by the tests.

The assignment itself carries no gradient; training recomputes it fresh on
every step.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .linalg import DimensionError


@dataclass
class Assignment:
    sigma: list        # label index n -> branch index sigma[n]
    total_cost: float


def build_cost_matrix(labels, probs):
    """cost[n][m] = -probs[m][labels[n]]: negated probability the m-th branch
    assigns to the n-th ground-truth label."""
    n = len(labels)
    if len(probs) != n:
        raise DimensionError(f"{n} labels vs {len(probs)} predictions")
    for p in probs:
        if abs(float(np.sum(p)) - 1.0) > 1e-9:
            raise ValueError("prediction is not a normalized distribution")
    cost = np.empty((n, n))
    for i, label in enumerate(labels):
        if not 0 <= label < len(probs[0]):
            raise ValueError(f"label {label} out of range [0, {len(probs[0])})")
        for m in range(n):
            cost[i, m] = -probs[m][label]
    return cost


def hungarian(cost):
    """Kuhn-Munkres with dual potentials, O(N^3). Handles negative entries.
    Deterministic for a fixed input; tie-breaking is the algorithm's own."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost matrix must be square, got {cost.shape}")
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_row = np.zeros(n + 1, dtype=np.int64)   # col j -> assigned row (1-based)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_row[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[col_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if col_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_row[j0] = col_row[j1]
            j0 = j1
    sigma = [0] * n
    for j in range(1, n + 1):
        sigma[col_row[j] - 1] = j - 1
    # fsum makes the reported cost independent of summation order, so the
    # minimal cost is exactly invariant under label reordering
    total = math.fsum(cost[i, sigma[i]] for i in range(n))
    return Assignment(sigma=sigma, total_cost=total)


def brute_force_assign(cost):
    """Exhaustive oracle over all permutations; test use only."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost matrix must be square, got {cost.shape}")
    n = cost.shape[0]
    if n > 9:
        raise ValueError(f"brute force limited to N <= 9, got {n}")
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n), perms].sum(axis=1)
    best = perms[int(np.argmin(totals))].tolist()
    return Assignment(sigma=best, total_cost=math.fsum(cost[i, best[i]] for i in range(n)))
