"""Monotone-operator tools on sampled maps.

Everything here works on finite samples ``x_i -> g_i`` of a monotone map (for
instance an optimal transport map, i.e. the gradient of a convex potential).
Resolvents and Yosida approximations are represented on the transformed sample
points ``x_i + lambda g_i``, where they are known exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .measures import DiscreteMeasure, pushforward, support_stats
from .transport import (
    Geodesic,
    TransportPlan,
    check_monotone_optimal,
    optimal_map,
    pairwise_lipschitz,
)

__all__ = [
    "MonotoneSampleMap",
    "NotProlongable",
    "Prolongation",
    "RegularPerturbationReport",
    "certify_regular_perturbation",
    "cyclic_monotonicity_constant",
    "hull_coverage",
    "map_continuity_probe",
    "monotonicity_constant",
    "prolong_geodesic",
    "prolongation_factor",
    "resolvent_apply",
    "yosida_apply",
]


class NotProlongable(ValueError):
    """The geodesic cannot be extended past its endpoint."""


def _as_2d(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass(frozen=True, eq=False)
class MonotoneSampleMap:
    """Samples ``outputs[i]`` of a (set-valued) monotone map at ``inputs[i]``."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x, g = _as_2d(self.inputs), _as_2d(self.outputs)
        if x.shape != g.shape:
            raise ValueError(f"inputs {x.shape} and outputs {g.shape} must align")
        x.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", g)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def _pair_terms(self):
        dx = self.inputs[:, None, :] - self.inputs[None, :, :]
        dg = self.outputs[:, None, :] - self.outputs[None, :, :]
        return np.einsum("ijk,ijk->ij", dg, dx), np.einsum("ijk,ijk->ij", dx, dx)

    def is_monotone(self, rtol: float = 1e-9) -> bool:
        inner, sq = self._pair_terms()
        return bool(np.all(inner >= -rtol * sq))

    def lipschitz(self):
        return pairwise_lipschitz(self.inputs, self.outputs)


def monotonicity_constant(m: MonotoneSampleMap) -> float:
    """``2 * min <g_i - g_j, x_i - x_j> / |x_i - x_j|^2`` over distinct inputs."""
    inner, sq = m._pair_terms()
    mask = sq > 0
    if not np.any(mask):
        raise ValueError("monotonicity constant needs at least two distinct inputs")
    return float(2.0 * np.min(inner[mask] / sq[mask]))


def cyclic_monotonicity_constant(m: MonotoneSampleMap, max_iter: int = 100) -> float:
    """Largest ``ell`` such that ``g - (ell / 2) id`` is cyclically monotone on the samples.

    This is the sample-level strong convexity modulus of a potential
    interpolating the data. It never exceeds :func:`monotonicity_constant`,
    which only looks at 2-cycles. Computed by Dinkelbach iterations on the
    ratio of cycle sums, each step being one assignment problem.
    """
    x, g = m.inputs, m.outputs
    c = monotonicity_constant(m) / 2.0
    # cycle sums of a and b are the cost gains of permuting outputs / inputs
    a = np.einsum("ik,ik->i", x, g)[:, None] - x @ g.T
    b = np.einsum("ik,ik->i", x, x)[:, None] - x @ x.T
    scale = m.n * (np.abs(a).max() + np.abs(b).max())
    for _ in range(max_iter):
        cost = a - c * b
        rows, perm = linear_sum_assignment(cost)
        if cost[rows, perm].sum() >= -1e-12 * scale:
            break
        c = a[rows, perm].sum() / b[rows, perm].sum()
    return float(2.0 * c)


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def resolvent_apply(m: MonotoneSampleMap, lam: float) -> MonotoneSampleMap:
    """Samples of ``(id + lam * G)^{-1}``: it sends ``x_i + lam g_i`` back to ``x_i``."""
    _check_lambda(lam)
    return MonotoneSampleMap(m.inputs + lam * m.outputs, m.inputs)


def yosida_apply(m: MonotoneSampleMap, lam: float) -> MonotoneSampleMap:
    """Samples of ``(id - J_lam) / lam``; equals ``g_i`` at ``x_i + lam g_i``."""
    _check_lambda(lam)
    z = m.inputs + lam * m.outputs
    return MonotoneSampleMap(z, (z - m.inputs) / lam)


# --------------------------------------------------------------------------
# prolongation


def prolongation_factor(ell: float) -> float:
    """Extension factor for a map with monotonicity constant ``ell > 0``.

    Any value below ``ell / (2 - ell)`` keeps the extrapolated potential
    strongly convex when ``ell < 2``; the midpoint of that range is used,
    capped at 1 so that ``ell`` a rounding error below 2 does not explode.
    """
    if ell <= 0:
        raise NotProlongable(f"monotonicity constant {ell:.3g} is not positive")
    if ell >= 4.0 / 3.0:
        return 1.0
    return ell / (2.0 * (2.0 - ell))


@dataclass(frozen=True, eq=False)
class Prolongation:
    geodesic: Geodesic
    s: float
    ell: float
    factor: float
    reverse_lipschitz: float

    def original_parameter(self, t: float) -> float:
        """Parameter of the original geodesic matching ``t`` on the extended one."""
        return (1.0 - self.s) * (1.0 + self.factor) * t + self.s

    def extended_parameter(self, u: float) -> float:
        """Parameter on the extended geodesic of the original time ``u``."""
        return (u - self.s) / ((1.0 - self.s) * (1.0 + self.factor))


def prolong_geodesic(g: Geodesic, s: float, backward: bool = False) -> Prolongation:
    """Extend ``g`` beyond its endpoint, starting from the interior point ``g(s)``.

    The map ``g(s) -> g(1)`` is ``grad phi``; the new geodesic runs from ``g(s)``
    to ``((1 + f) grad phi - f id)_# g(s)``. The factor ``f`` comes from the
    cyclic monotonicity constant of the sampled map: the pairwise constant can
    overstate it and then the extrapolated plan stops being optimal.
    With ``backward=True`` the reversed geodesic is extended instead, which
    moves past the original start.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie strictly inside (0, 1)")
    if backward:
        g = g.reversed()
    p = g.positions(s)
    y = g.positions(1.0)
    rev = pairwise_lipschitz(y, p)
    if not np.isfinite(rev.bound):
        raise NotProlongable("the endpoint has coincident atoms with distinct preimages")
    sample = MonotoneSampleMap(p, y)
    if monotonicity_constant(sample) <= 0:
        raise NotProlongable("the map to the endpoint is not strongly monotone")
    ell = cyclic_monotonicity_constant(sample)
    factor = prolongation_factor(ell)
    z = (1.0 + factor) * y - factor * p
    start = DiscreteMeasure(p)
    plan = TransportPlan(start, DiscreteMeasure(z), np.arange(start.n))
    if not check_monotone_optimal(plan):
        raise NotProlongable("extrapolated plan fails the optimality certificate")
    return Prolongation(Geodesic(plan, verify=False), s, ell, factor, rev.bound)


# --------------------------------------------------------------------------
# regular perturbations


def hull_coverage(points, samples: int = 2000, seed: int = 0, spacing_factor: float = 2.0) -> float:
    """Fraction of the convex hull of ``points`` lying near some atom.

    Close to 1 for uniform samples of a convex body, visibly smaller when the
    support has holes or dents.
    """
    from scipy.spatial import Delaunay, QhullError, cKDTree

    pts = _as_2d(points)
    n, d = pts.shape
    if n < d + 2:
        return 1.0
    rng = np.random.default_rng(seed)
    tree = cKDTree(pts)
    nn = tree.query(pts, k=2)[0][:, 1]
    h = spacing_factor * float(np.mean(nn))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    cand = rng.uniform(lo, hi, size=(4 * samples, d))
    if d > 1:
        try:
            cand = cand[Delaunay(pts).find_simplex(cand) >= 0]
        except QhullError:
            return 1.0
    cand = cand[:samples]
    if cand.shape[0] == 0:
        return 1.0
    dist = tree.query(cand, k=1)[0]
    return float(np.mean(dist <= h))


def _perturbation_level(r: float, big_r: float) -> float:
    return max(4.0 * big_r + 2.0 * abs(r), 2.0)


@dataclass
class RegularPerturbationReport:
    eps0: float
    L_at_r: float
    max_lip: float
    max_identity_gap_over_eps: float
    monotone_ok: bool
    pushforward_ok: bool
    verdict: bool
    R: float = 0.0
    r: float = 0.0
    hull_coverage: float = 1.0
    eps_grid: list = field(default_factory=list)
    per_eps: list = field(default_factory=list)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def certify_regular_perturbation(
    g: Geodesic, eps_grid, eps0: float = 0.5, coverage_seed: int = 0
) -> RegularPerturbationReport:
    """Check the regular-perturbation conditions of ``g`` on a grid of times.

    For every ``eps`` the reverse map ``Psi_eps: g(eps) -> g(0)`` is sampled on
    the atoms and tested for: pairwise Lipschitz constant within ``L(r)`` (and
    the sharper bound 2), displacement at most ``eps * L(r)``, pairwise
    monotonicity, and exact pushforward onto the start measure.
    ``L(r) = max(4R + 2r, 2)`` with ``R`` the diameter of both endpoints'
    atoms and ``r`` the largest atom norm.
    """
    grid = [float(e) for e in eps_grid]
    if any(e < 0 or e > eps0 for e in grid):
        raise ValueError(f"eps values must lie in [0, {eps0}]")
    x0 = g.positions(0.0)
    both = DiscreteMeasure(np.vstack([x0, g.positions(1.0)]))
    big_r = support_stats(both).diameter

    per_eps = []
    max_lip = gap_ratio = 0.0
    mono_all = push_all = True
    r_max = 0.0
    for eps in grid:
        p = g.positions(eps)
        psi = x0  # Psi_eps(p_i) = x_i by reversing the atoms
        r = float(np.linalg.norm(p, axis=1).max())
        r_max = max(r_max, r)
        lip = pairwise_lipschitz(p, psi).bound
        gap = float(np.linalg.norm(psi - p, axis=1).max())
        sample = MonotoneSampleMap(p, psi)
        mono = sample.is_monotone()
        push = pushforward(DiscreteMeasure(p), psi).same_atoms(g.start)
        ratio = gap / eps if eps > 0 else 0.0
        level = _perturbation_level(r, big_r)
        per_eps.append(
            {
                "eps": eps,
                "r": r,
                "L": level,
                "lip": lip,
                "lip_le_two": bool(lip <= 2.0 * (1 + 1e-9)),
                "gap": gap,
                "gap_ok": bool(gap <= eps * level * (1 + 1e-12) + 1e-15),
                "monotone": mono,
                "pushforward": push,
            }
        )
        max_lip = max(max_lip, lip)
        gap_ratio = max(gap_ratio, ratio)
        mono_all &= mono
        push_all &= push
    level = _perturbation_level(r_max, big_r)
    verdict = (
        max_lip <= level and gap_ratio <= level and mono_all and push_all
    )
    return RegularPerturbationReport(
        eps0=eps0,
        L_at_r=level,
        max_lip=max_lip,
        max_identity_gap_over_eps=gap_ratio,
        monotone_ok=mono_all,
        pushforward_ok=push_all,
        verdict=bool(verdict),
        R=big_r,
        r=r_max,
        hull_coverage=hull_coverage(x0, seed=coverage_seed),
        eps_grid=grid,
        per_eps=per_eps,
    )


def map_continuity_probe(rho, targets, limit) -> np.ndarray:
    """``L^2(rho)`` distances between the optimal maps ``rho -> targets[k]`` and ``rho -> limit``."""
    reference = optimal_map(rho, limit)
    gaps = []
    for mu_k in targets:
        t_k = optimal_map(rho, mu_k)
        diff = t_k - reference
        gaps.append(float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff)))))
    return np.array(gaps)
