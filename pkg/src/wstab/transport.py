"""Exact quadratic-cost optimal transport between equal-weight clouds.

Between two clouds of the same size every optimal plan can be taken to be a
permutation, so the transport problem is a linear assignment problem. The
dense solver uses :func:`scipy.optimize.linear_sum_assignment` for the optimum
and then recovers dual potentials to reason about ties:

* among all optimal permutations the lexicographically smallest one is
  returned, so results do not depend on solver internals;
* an optimal plan is declared *non-unique* when an alternative optimal
  permutation changes the target point of some atom. Swapping coincident
  target atoms does not count, it yields the same plan.

One-dimensional problems are solved by monotone rearrangement (sorting), which
is exact and scales to large grids.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .measures import DiscreteMeasure, as_measure

__all__ = [
    "Geodesic",
    "LipschitzCertificate",
    "NonUniquePlan",
    "TransportPlan",
    "check_monotone_optimal",
    "geodesic",
    "has_unique_map",
    "intermediate_map",
    "interpolation_lipschitz_limit",
    "optimal_map",
    "pairwise_lipschitz",
    "solve_assignment",
    "sq_distances",
    "w2",
]

# relative tolerance used to decide that two assignment costs tie
TIE_RTOL = 1e-12


class NonUniquePlan(ValueError):
    """The optimal plan is not unique, or is not induced by a map."""


def sq_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Matrix of squared Euclidean distances ``|x_i - y_j|^2``."""
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Permutation coupling: atom ``i`` of ``source`` goes to atom ``matching[i]``."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    matching: np.ndarray
    cost: float = field(default=np.nan)

    def __post_init__(self):
        m = np.asarray(self.matching, dtype=np.intp)
        n = self.source.n
        if self.target.n != n:
            raise ValueError("source and target must have the same number of atoms")
        if self.source.dim != self.target.dim:
            raise ValueError("source and target must have the same dimension")
        if m.shape != (n,) or not np.array_equal(np.sort(m), np.arange(n)):
            raise ValueError("matching must be a permutation of range(N)")
        m.setflags(write=False)
        object.__setattr__(self, "matching", m)
        recomputed = float(self.pair_costs().mean())
        if np.isnan(self.cost):
            object.__setattr__(self, "cost", recomputed)
        elif abs(self.cost - recomputed) > 1e-12 * max(abs(recomputed), 1e-300):
            raise ValueError(f"cost {self.cost} disagrees with recomputed {recomputed}")

    @property
    def n(self) -> int:
        return self.source.n

    def images(self) -> np.ndarray:
        """Target point of every source atom, ``y_{sigma(i)}``."""
        return self.target.points[self.matching]

    def pair_costs(self) -> np.ndarray:
        diff = self.source.points - self.images()
        return np.einsum("ij,ij->i", diff, diff)

    def inverse(self) -> TransportPlan:
        inv = np.empty_like(self.matching)
        inv[self.matching] = np.arange(self.n)
        return TransportPlan(self.target, self.source, inv, self.cost)


# --------------------------------------------------------------------------
# assignment solvers


def _sort_assignment(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Lexicographically smallest optimal permutation for 1D clouds."""
    n = x.size
    ox = np.argsort(x, kind="stable")
    oy = np.argsort(y, kind="stable")
    xs, ys = x[ox], y[oy]
    run_start = np.flatnonzero(np.r_[True, ys[1:] != ys[:-1]])
    run_end = np.r_[run_start[1:], n]
    grp_start = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    grp_end = np.r_[grp_start[1:], n]
    sigma = np.empty(n, dtype=np.intp)

    if grp_start.size == n:
        # distinct sources: each source rank needs one value run; inside a run
        # rows take indices in increasing order
        if run_start.size == n:
            sigma[ox] = oy
            return sigma
        for a, b in zip(run_start, run_end):
            sigma[np.sort(ox[a:b])] = oy[a:b]
        return sigma

    # general case: tied sources share a multiset of values, greedy by row index
    run_of_rank = np.repeat(np.arange(run_start.size), run_end - run_start)
    group_of_row = np.empty(n, dtype=np.intp)
    group_of_row[ox] = np.repeat(np.arange(grp_start.size), grp_end - grp_start)
    heads = run_start.copy()
    quotas: list[dict[int, int]] = []
    heaps: list[list[tuple[int, int]]] = []
    for a, b in zip(grp_start, grp_end):
        runs, counts = np.unique(run_of_rank[a:b], return_counts=True)
        quotas.append(dict(zip(runs.tolist(), counts.tolist())))
        heaps.append([(int(oy[heads[r]]), int(r)) for r in runs])
        heapq.heapify(heaps[-1])
    for i in range(n):
        g = group_of_row[i]
        heap, quota = heaps[g], quotas[g]
        while True:
            idx, r = heapq.heappop(heap)
            if quota[r] == 0:
                continue
            head = int(oy[heads[r]])
            if head != idx:
                heapq.heappush(heap, (head, r))
                continue
            sigma[i] = idx
            heads[r] += 1
            quota[r] -= 1
            if quota[r] > 0:
                heapq.heappush(heap, (int(oy[heads[r]]), r))
            break
    return sigma


def _potentials(cost: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Column potentials certifying optimality of ``sigma`` (Bellman-Ford).

    Reduced costs ``c_ij - c_{i,sigma(i)} + p_{sigma(i)} - p_j`` are nonnegative
    and vanish on the matching.
    """
    n = sigma.size
    w = cost - cost[np.arange(n), sigma][:, None]
    p = np.zeros(n)
    for _ in range(n + 1):
        cand = (p[sigma][:, None] + w).min(axis=0)
        if not np.any(cand < p):
            break
        p = np.minimum(p, cand)
    return p


def _tight_edges(cost: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    n = sigma.size
    p = _potentials(cost, sigma)
    reduced = cost - cost[np.arange(n), sigma][:, None] + p[sigma][:, None] - p[None, :]
    tol = TIE_RTOL * max(float(cost.max()), 1e-300)
    return reduced <= tol


def _alternating_path(tight, inv, start_row, target_col, blocked_cols):
    """BFS for an alternating path from ``start_row`` to ``target_col``.

    Returns ``parent`` (row that first reached each column) or ``None``.
    """
    n = inv.size
    visited = blocked_cols.copy()
    parent = np.full(n, -1, dtype=np.intp)
    frontier = np.array([start_row], dtype=np.intp)
    while frontier.size:
        sub = tight[frontier] & ~visited
        reached = sub.any(axis=0)
        cols = np.flatnonzero(reached)
        if cols.size == 0:
            return None
        parent[cols] = frontier[sub[:, cols].argmax(axis=0)]
        visited[cols] = True
        if reached[target_col]:
            return parent
        frontier = inv[cols]
    return None


def _lexmin_matching(tight: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Smallest permutation (lexicographic) among perfect matchings in ``tight``."""
    n = sigma.size
    sigma = sigma.copy()
    inv = np.empty(n, dtype=np.intp)
    inv[sigma] = np.arange(n)
    col_fixed = np.zeros(n, dtype=bool)
    for i in range(n):
        si = sigma[i]
        cands = np.flatnonzero(tight[i, :si] & ~col_fixed[:si])
        for j in cands:
            k0 = inv[j]
            blocked = col_fixed.copy()
            blocked[j] = True
            parent = _alternating_path(tight, inv, k0, si, blocked)
            if parent is None:
                continue
            c = si
            while True:
                r = parent[c]
                old = sigma[r]
                sigma[r] = c
                inv[c] = r
                if r == k0:
                    break
                c = old
            sigma[i] = j
            inv[j] = i
            break
        col_fixed[sigma[i]] = True
    return sigma


def _dense_assignment(x: np.ndarray, y: np.ndarray):
    cost = sq_distances(x, y)
    _, sigma = linear_sum_assignment(cost)
    sigma = sigma.astype(np.intp)
    tight = _tight_edges(cost, sigma)
    if tight.sum() > sigma.size:
        sigma = _lexmin_matching(tight, sigma)
    return sigma, tight


def _points(obj) -> np.ndarray:
    return as_measure(obj).points


def solve_assignment(X, Y, method: str = "auto") -> TransportPlan:
    """Minimum squared-distance bijection between two equal-size clouds.

    ``method`` is ``"sort"`` (1D only), ``"dense"`` or ``"auto"``. Ties between
    optimal permutations are broken towards the lexicographically smallest.
    """
    mu, nu = as_measure(X), as_measure(Y)
    if mu.n != nu.n:
        raise ValueError(f"clouds must have equal size, got {mu.n} and {nu.n}")
    if mu.dim != nu.dim:
        raise ValueError(f"clouds must have equal dimension, got {mu.dim} and {nu.dim}")
    if method == "auto":
        method = "sort" if mu.dim == 1 else "dense"
    if method == "sort":
        if mu.dim != 1:
            raise ValueError("sort method is only exact in one dimension")
        sigma = _sort_assignment(mu.points[:, 0], nu.points[:, 0])
    elif method == "dense":
        sigma, _ = _dense_assignment(mu.points, nu.points)
    else:
        raise ValueError(f"unknown assignment method {method!r}")
    return TransportPlan(mu, nu, sigma)


def w2(mu, nu) -> float:
    """Quadratic Wasserstein distance between two equal-size clouds."""
    mu, nu = as_measure(mu), as_measure(nu)
    if mu.n != nu.n or mu.dim != nu.dim:
        raise ValueError("w2 needs clouds of equal size and dimension")
    if mu.dim == 1:
        diff = np.sort(mu.points[:, 0]) - np.sort(nu.points[:, 0])
        return float(np.sqrt(np.mean(diff * diff)))
    return float(np.sqrt(solve_assignment(mu, nu).cost))


# --------------------------------------------------------------------------
# uniqueness and maps


def _values_differ(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.any(a != b, axis=-1)


def has_unique_map(plan: TransportPlan) -> bool:
    """True iff ``plan`` is the unique optimal plan and it is induced by a map.

    Assumes ``plan`` is optimal.
    """
    x, y = plan.source.points, plan.target.points
    sigma = plan.matching
    ymatched = y[sigma]
    if plan.source.dim == 1:
        order = np.argsort(x[:, 0], kind="stable")
        xs, ym = x[order, 0], ymatched[order, 0]
        same_x = xs[1:] == xs[:-1]
        return not np.any(same_x & (ym[1:] != ym[:-1]))
    cost = sq_distances(x, y)
    tight = _tight_edges(cost, sigma)
    if tight.sum() == sigma.size:
        return True
    # row i -> row k when i may take k's column in an optimal permutation
    adj = tight[:, sigma]
    np.fill_diagonal(adj, False)
    rows, cols = np.nonzero(adj)
    changing = _values_differ(ymatched[rows], ymatched[cols])
    if not np.any(changing):
        return True
    graph = csr_matrix((np.ones(rows.size), (rows, cols)), shape=adj.shape)
    _, labels = connected_components(graph, directed=True, connection="strong")
    return not np.any(changing & (labels[rows] == labels[cols]))


def optimal_map(mu, nu, assume_unique: bool = False) -> np.ndarray:
    """Values ``T(x_i)`` of the optimal transport map from ``mu`` to ``nu``.

    Raises :class:`NonUniquePlan` when the optimal plan is not unique or is
    not induced by a map, unless the caller declares uniqueness.
    """
    plan = solve_assignment(mu, nu)
    if not assume_unique and not has_unique_map(plan):
        raise NonUniquePlan(
            "optimal plan is not unique or not generated by a transport map"
        )
    return plan.images()


# --------------------------------------------------------------------------
# certificates


class LipschitzCertificate(NamedTuple):
    """Largest pairwise difference quotient of a sampled map."""

    bound: float
    witness_pair: tuple[int, int] | None

    def recompute(self, inputs, outputs) -> float:
        if self.witness_pair is None:
            return 0.0
        i, j = self.witness_pair
        x, y = np.asarray(inputs, float), np.asarray(outputs, float)
        num = np.linalg.norm(np.atleast_1d(y[i] - y[j]))
        den = np.linalg.norm(np.atleast_1d(x[i] - x[j]))
        if den == 0.0:
            return float("inf") if num > 0 else 0.0
        return float(num / den)


def pairwise_lipschitz(inputs, outputs, chunk: int = 1024) -> LipschitzCertificate:
    """Exhaustive pairwise Lipschitz scan of the sampled map ``inputs -> outputs``.

    Pairs of coincident inputs with coincident outputs are skipped; coincident
    inputs with distinct outputs give an infinite bound.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("inputs and outputs must be aligned")
    best, witness = 0.0, None
    for s in range(0, n, chunk):
        xi, yi = x[s : s + chunk], y[s : s + chunk]
        dx = np.sqrt(sq_distances(xi, x))
        dy = np.sqrt(sq_distances(yi, y))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dx > 0, dy / dx, np.where(dy > 0, np.inf, 0.0))
        k = int(np.argmax(ratio))
        r = float(ratio.flat[k])
        if r > best:
            best = r
            a, b = divmod(k, n)
            witness = (s + a, b)
    return LipschitzCertificate(best, witness)


def check_monotone_optimal(plan: TransportPlan, rtol: float = 1e-9) -> bool:
    """Sound but incomplete optimality check of a permutation plan.

    Looks for a reassignment along any 2- or 3-cycle that lowers the total cost
    by more than ``rtol`` times the current cost of the atoms involved. In one
    dimension the check is exact (monotonicity of the rearrangement).
    """
    x, y = plan.source.points, plan.images()
    n = plan.n
    if n < 2:
        return True
    if plan.source.dim == 1:
        order = np.lexsort((y[:, 0], x[:, 0]))
        return bool(np.all(np.diff(y[order, 0]) >= 0))
    d = plan.pair_costs()
    big = sq_distances(x, y)
    e = big - d[:, None]
    floor = 64 * np.finfo(float).eps * max(float(big.max()), 1e-300)
    if np.any(e + e.T < -(rtol * (d[:, None] + d[None, :]) + floor)):
        return False
    for i in range(n):
        tri = e[i][:, None] + e + e[:, i][None, :]
        local = d[i] + d[:, None] + d[None, :]
        if np.any(tri < -(rtol * local + floor)):
            return False
    return True


# --------------------------------------------------------------------------
# geodesics


class Geodesic:
    """Constant-speed displacement interpolation along an optimal plan."""

    def __init__(self, plan: TransportPlan, verify: bool = True):
        if verify and not check_monotone_optimal(plan):
            raise ValueError("plan fails the monotone optimality certificate")
        self.plan = plan
        self._x = plan.source.points
        self._y = plan.images()
        self.length = float(np.sqrt(plan.cost))

    @property
    def start(self) -> DiscreteMeasure:
        return self.plan.source

    @property
    def end(self) -> DiscreteMeasure:
        return self.plan.target

    def positions(self, t: float) -> np.ndarray:
        """Atom positions at time ``t``, aligned with the start atoms."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"geodesic parameter must lie in [0, 1], got {t}")
        if t == 0.0:
            return self._x.copy()
        if t == 1.0:
            return self._y.copy()
        return (1.0 - t) * self._x + t * self._y

    def eval(self, t: float) -> DiscreteMeasure:
        return DiscreteMeasure(self.positions(t))

    def reversed(self) -> Geodesic:
        return Geodesic(self.plan.inverse(), verify=False)

    def __repr__(self) -> str:
        return f"Geodesic(n={self.plan.n}, dim={self.start.dim}, length={self.length:.6g})"


def geodesic(mu, nu) -> Geodesic:
    """Unique geodesic from ``mu`` to ``nu``; raises :class:`NonUniquePlan` otherwise."""
    plan = solve_assignment(mu, nu)
    if not has_unique_map(plan):
        raise NonUniquePlan("optimal plan is not unique or not generated by a map")
    return Geodesic(plan)


def interpolation_lipschitz_limit(a: float, b: float) -> float:
    """Lipschitz limit of the intermediate map from time ``a`` to time ``b``."""
    return b / a if a < b else (1.0 - b) / (1.0 - a)


def intermediate_map(g: Geodesic, a: float, b: float):
    """Sampled intermediate map ``T_{a,b}`` and its pairwise Lipschitz certificate.

    Returns ``(values, certificate)`` where ``values[i]`` is the image of the
    ``i``-th atom of ``g.eval(a)``.
    """
    if not (0.0 < a < 1.0 and 0.0 < b < 1.0):
        raise ValueError("intermediate maps need a, b strictly inside (0, 1)")
    if a == b:
        raise ValueError("a and b must differ")
    pa, pb = g.positions(a), g.positions(b)
    return pb, pairwise_lipschitz(pa, pb)
