"""Localized Lipschitz feedback toward a reference trajectory.

A feedback field is synthesized on the atoms of the current cloud from the
optimal matching to the reference cloud, damped by a cutoff supported in the
action set ``omega`` and rescaled by one global factor so that declared sup
and Lipschitz caps hold. Between resynchronizations the field is held fixed
as a genuine function of space: the atom values are extended componentwise
by the midpoint of the upper and lower McShane extensions (same Lipschitz
constant, exact on atoms) and multiplied by the cutoff.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from .dynamics import Trajectory, field_velocity, integrate_rk4, time_grid
from .dynamics import NonlocalFieldSpec
from .measures import BoxDomain, DiscreteMeasure, as_measure
from .transport import optimal_map, pairwise_lipschitz

__all__ = [
    "Budget",
    "ControlField",
    "CutoffSpec",
    "FeedbackPolicy",
    "build_cutoff",
    "certify_admissible",
    "default_delta",
    "solve_controlled",
    "synthesize_feedback",
]

log = logging.getLogger(__name__)


def default_delta(omega: list[BoxDomain]) -> float:
    """10% of the smallest box edge of ``omega``."""
    return 0.1 * float(min(b.edges.min() for b in omega))


@dataclass(frozen=True)
class CutoffSpec:
    """``chi(x) = clamp(max_k dist(x, complement of box_k) / delta, 0, 1)``.

    Taking the largest inner distance over the boxes keeps ``chi`` zero
    outside ``omega``, equal to one at depth ``delta`` inside any box and
    ``1/delta``-Lipschitz.
    """

    omega: tuple[BoxDomain, ...]
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(self.omega))
        if not self.omega:
            raise ValueError("omega must contain at least one box")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        dims = {b.dim for b in self.omega}
        if len(dims) != 1:
            raise ValueError("all boxes of omega must share one dimension")

    @property
    def dim(self) -> int:
        return self.omega[0].dim

    def inside(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float).reshape(-1, self.dim)
        mask = np.zeros(pts.shape[0], dtype=bool)
        for box in self.omega:
            mask |= box.contains(pts)
        return mask

    def depth(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.max([b.inner_distance(pts) for b in self.omega], axis=0)

    def __call__(self, x) -> np.ndarray:
        return np.clip(self.depth(x) / self.delta, 0.0, 1.0)


def build_cutoff(omega, delta: float | None = None) -> CutoffSpec:
    omega = list(omega)
    if not omega:
        raise ValueError("omega must contain at least one box")
    return CutoffSpec(tuple(omega), default_delta(omega) if delta is None else float(delta))


class Budget(NamedTuple):
    sup_bound: float
    lip_bound: float


@dataclass(frozen=True)
class FeedbackPolicy:
    gain: float
    cutoff: CutoffSpec
    budget: Budget = Budget(np.inf, np.inf)

    def __post_init__(self):
        if self.gain < 0:
            raise ValueError("gain must be nonnegative")
        if not (self.budget.sup_bound > 0 and self.budget.lip_bound > 0):
            raise ValueError("budget caps must be positive")


@dataclass(frozen=True, eq=False)
class ControlField:
    """A held control: atom positions, the velocities applied there, and the
    off-atom extension ``u(x) = chi(x) * ext(w)(x)``.

    ``raw`` holds the undamped feedback values ``w`` (already rescaled) so
    that ``velocities = chi(positions) * raw``.
    """

    positions: np.ndarray
    velocities: np.ndarray
    raw: np.ndarray
    gain: float
    cutoff: CutoffSpec
    budget: Budget
    scale: float = 1.0
    time: float = 0.0
    _ext: tuple = field(default=None, repr=False)

    def __post_init__(self):
        # the cutoff kills everything off the live atoms, so only they anchor
        # the extension
        live = np.flatnonzero(self.cutoff(self.positions) > 0)
        anchors, values = self.positions[live], self.raw[live]
        object.__setattr__(self, "_ext", (anchors, values, _component_lipschitz(anchors, values)))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def is_zero(self) -> bool:
        return not np.any(self.velocities)

    def sup(self) -> float:
        return float(np.linalg.norm(self.velocities, axis=1).max()) if self.n else 0.0

    def lipschitz(self) -> float:
        return pairwise_lipschitz(self.positions, self.velocities).bound

    def __call__(self, x) -> np.ndarray:
        """Evaluate the held field at arbitrary points ``x`` (M, d)."""
        pts = np.asarray(x, dtype=float).reshape(-1, self.positions.shape[1])
        chi = self.cutoff(pts)
        out = np.zeros_like(pts)
        live = chi > 0
        anchors, values, lips = self._ext
        if self.is_zero() or not live.any():
            return out
        dist = cdist(pts[live], anchors)
        ext = np.empty((int(live.sum()), pts.shape[1]))
        for k in range(pts.shape[1]):
            upper = np.min(values[None, :, k] + lips[k] * dist, axis=1)
            lower = np.max(values[None, :, k] - lips[k] * dist, axis=1)
            ext[:, k] = 0.5 * (upper + lower)
        out[live] = chi[live, None] * ext
        return out


def _row_lipschitz(points: np.ndarray, values: np.ndarray, rows: np.ndarray) -> float:
    """Largest difference quotient over pairs with at least one index in ``rows``."""
    if rows.size == 0 or points.shape[0] < 2:
        return 0.0
    dx = cdist(points[rows], points)
    dv = cdist(values[rows], values)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dx > 0, dv / dx, np.where(dv > 0, np.inf, 0.0))
    return float(ratio.max())


def _component_lipschitz(points: np.ndarray, values: np.ndarray) -> np.ndarray:
    lips = np.zeros(values.shape[1])
    if not np.any(values):
        return lips
    rows = np.arange(points.shape[0])
    for k in range(values.shape[1]):
        lips[k] = _row_lipschitz(points, values[:, k : k + 1], rows)
    if not np.all(np.isfinite(lips)):
        raise FloatingPointError("feedback is not Lipschitz on the atoms (coincident atoms disagree)")
    return lips


def _zero_field(current: DiscreteMeasure, gain, cutoff, budget, t) -> ControlField:
    z = np.zeros_like(current.points)
    return ControlField(current.points.copy(), z, z.copy(), gain, cutoff, budget, 0.0, t)


def synthesize_feedback(
    current,
    reference,
    gain: float,
    cutoff: CutoffSpec,
    budget: Budget = Budget(np.inf, np.inf),
    t: float = 0.0,
) -> ControlField:
    """OT-matched feedback ``chi(x_i) s (T(x_i) - x_i)`` under a global budget rescale.

    ``T`` is the optimal map from ``current`` to ``reference``; a non-unique
    plan raises :class:`~wstab.transport.NonUniquePlan`.
    """
    current, reference = as_measure(current), as_measure(reference)
    if current.n != reference.n:
        raise ValueError("current and reference must have the same number of atoms")
    budget = Budget(*budget)
    chi = cutoff(current.points)
    if gain == 0 or not np.any(chi > 0):
        return _zero_field(current, gain, cutoff, budget, t)
    raw = gain * (optimal_map(current, reference) - current.points)
    vel = chi[:, None] * raw
    if not np.any(vel):
        return _zero_field(current, gain, cutoff, budget, t)
    sup = float(np.linalg.norm(vel, axis=1).max())
    lip = _row_lipschitz(current.points, vel, np.flatnonzero(chi > 0))
    scale = min(1.0, budget.sup_bound / sup, budget.lip_bound / lip if lip > 0 else np.inf)
    # the cap is met exactly in exact arithmetic; shave a few ulps so rounding
    # in the product cannot push a ratio above the cap
    if scale < 1.0:
        scale *= 1.0 - 4 * np.finfo(float).eps
    return ControlField(
        current.points.copy(), scale * vel, scale * raw, gain, cutoff, budget, scale, t
    )


def certify_admissible(
    u: ControlField, omega=None, rtol: float = 1e-9
) -> tuple[bool, list[dict]]:
    """Atomwise support, sup-cap and pairwise Lipschitz-cap checks.

    Every violating atom or pair is listed. ``omega`` defaults to the field's
    own cutoff support.
    """
    boxes = list(u.cutoff.omega if omega is None else omega)
    pts, vel = u.positions, u.velocities
    inside = np.zeros(u.n, dtype=bool)
    for box in boxes:
        inside |= box.contains(pts)
    violations: list[dict] = []
    speed = np.linalg.norm(vel, axis=1)
    for i in np.flatnonzero(~inside & np.any(vel != 0, axis=1)):
        violations.append({"kind": "support", "atom": int(i), "speed": float(speed[i])})
    cap = u.budget.sup_bound * (1 + rtol)
    for i in np.flatnonzero(speed > cap):
        violations.append({"kind": "sup", "atom": int(i), "speed": float(speed[i])})
    lip_cap = u.budget.lip_bound * (1 + rtol)
    live = np.flatnonzero(np.any(vel != 0, axis=1))
    if np.isfinite(lip_cap) and live.size:
        # pairs of two motionless atoms have ratio 0; scan live rows only and
        # keep each live-live pair once
        for i in live:
            dx = np.linalg.norm(pts - pts[i], axis=1)
            dv = np.linalg.norm(vel - vel[i], axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(dx > 0, dv / dx, np.where(dv > 0, np.inf, 0.0))
            for j in np.flatnonzero(ratio > lip_cap):
                if j > i or not np.any(vel[j]):
                    violations.append(
                        {"kind": "lipschitz", "pair": (int(min(i, j)), int(max(i, j))),
                         "ratio": float(ratio[j])}
                    )
    return not violations, violations


def solve_controlled(
    spec: NonlocalFieldSpec,
    policy: FeedbackPolicy,
    rho,
    reference_traj: Trajectory,
    T: float,
    dt: float,
    resync_every: int = 1,
) -> Trajectory:
    """Integrate ``x' = V_t(x, mu_t) + u_t(x)`` with a piecewise-constant feedback.

    The field is resynthesized every ``resync_every`` steps against the
    reference state at that time and certified before use. ``meta`` records
    the held fields, their resync times and the conjunction of certificates.
    """
    rho = as_measure(rho)
    if resync_every < 1:
        raise ValueError("resync_every must be at least 1")
    if T > reference_traj.T + 1e-12:
        raise ValueError("reference trajectory is shorter than the horizon")
    if rho.n != reference_traj.n:
        raise ValueError("rho and the reference must have the same number of atoms")
    times = time_grid(T, dt)

    if policy.gain == 0:
        def rhs(t, x):
            return field_velocity(spec, t, x, x)

        pos, vel = integrate_rk4(rhs, rho.points, times)
        meta = {"dt": dt, "resync_every": resync_every, "admissible": True, "controls": []}
        return Trajectory(times, pos, vel, spec, meta)

    held: list[ControlField] = []
    violations: list[dict] = []

    def on_step(k, t, x):
        if k % resync_every or k == times.size - 1 and held:
            return
        u = synthesize_feedback(
            DiscreteMeasure(x), reference_traj.at(t), policy.gain, policy.cutoff, policy.budget, t
        )
        ok, bad = certify_admissible(u)
        if not ok:
            violations.extend(dict(v, time=float(t)) for v in bad)
            log.warning("control at t=%.4g failed certification (%d violations)", t, len(bad))
        held.append(u)

    def rhs(t, x):
        return field_velocity(spec, t, x, x) + held[-1](x)

    pos, vel = integrate_rk4(rhs, rho.points, times, on_step)
    meta = {
        "dt": dt,
        "resync_every": resync_every,
        "admissible": not violations,
        "violations": violations,
        "controls": held,
    }
    return Trajectory(times, pos, vel, spec, meta)
