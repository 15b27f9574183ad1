"""Slow, obviously-correct reference computations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_assignment(x, y):
    """(optimal cost, sorted list of all optimal permutations) by enumeration."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if x.shape[0] == 1 and x.shape[1] != y.shape[1]:
        x, y = x.T, y.T
    n = x.shape[0]
    c = [[float(np.sum((x[i] - y[j]) ** 2)) for j in range(n)] for i in range(n)]
    best, perms = math.inf, []
    for p in itertools.permutations(range(n)):
        s = math.fsum(c[i][p[i]] for i in range(n))
        if s < best - 1e-12 * max(1.0, abs(best) if math.isfinite(best) else 1.0):
            best, perms = s, [p]
        elif abs(s - best) <= 1e-12 * max(1.0, abs(best)):
            perms.append(p)
    return best, sorted(perms)


def brute_w2(x, y) -> float:
    return math.sqrt(brute_assignment(x, y)[0] / np.atleast_2d(x).shape[0])


def brute_cyclic_constant(x, g) -> float:
    """2 * min over non-identity permutations of sum <x_i, g_i - g_p(i)> / sum <x_i, x_i - x_p(i)>."""
    n = len(x)
    best = math.inf
    for p in itertools.permutations(range(n)):
        if all(i == p[i] for i in range(n)):
            continue
        num = sum(float(np.dot(x[i], g[i] - g[p[i]])) for i in range(n))
        den = sum(float(np.dot(x[i], x[i] - x[p[i]])) for i in range(n))
        if den > 1e-14:
            best = min(best, num / den)
    return 2.0 * best


def brute_lipschitz(x, y) -> float:
    best = 0.0
    for i in range(len(x)):
        for j in range(len(x)):
            dx = float(np.linalg.norm(np.atleast_1d(x[i] - x[j])))
            dy = float(np.linalg.norm(np.atleast_1d(y[i] - y[j])))
            if dx > 0:
                best = max(best, dy / dx)
            elif dy > 0:
                return math.inf
    return best


def quantile_w2_1d(a, b) -> float:
    """1D distance through the quantile functions, independent of any solver."""
    a, b = np.sort(np.ravel(a)), np.sort(np.ravel(b))
    return float(np.sqrt(np.mean((a - b) ** 2)))


def grid_vs_sites_w2(n_grid: int, k: int) -> float:
    """Closed form for cell-centre atoms on [0, 1] against k equal sites at (2j-1)/(2k).

    Each site receives a block of m = n_grid/k consecutive atoms with spacing
    h = 1/n_grid centred on it; the block variance is h^2 (m^2 - 1) / 12.
    """
    m = n_grid // k
    h = 1.0 / n_grid
    return math.sqrt(h * h * (m * m - 1) / 12.0)


def alpha_reference(r: float, kappa: float) -> float:
    # written from -r^(1+kappa)/log(r) via log10 to keep it independent
    return r ** (1 + kappa) / (math.log10(1 / r) * math.log(10))
