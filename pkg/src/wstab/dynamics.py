"""Mean-field particle dynamics for nonlocal velocity fields.

The reference trajectory is obtained by integrating the particle system

    x_i' = V_t(x_i, mu_t^N),   mu_t^N = (1/N) sum_j delta_{x_j(t)},

with the classical fourth-order Runge-Kutta scheme on a fixed step. Fields are
built from a closed registry of drift and interaction families so that their
bound constants stay meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .measures import BoxDomain, DiscreteMeasure, as_measure
from .transport import w2

__all__ = [
    "A2Result",
    "BlowUpError",
    "FieldBounds",
    "FieldConfigError",
    "NonlocalFieldSpec",
    "Trajectory",
    "check_A2",
    "estimate_bounds",
    "eval_field",
    "field_velocity",
    "flow_map",
    "integrate_rk4",
    "solve_reference",
]


class FieldConfigError(ValueError):
    pass


class BlowUpError(FloatingPointError):
    def __init__(self, time: float, message: str = "non-finite state"):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = time


_DRIFT_PARAMS = {
    "zero": set(),
    "constant": {"velocity"},
    "rotation": {"rate", "center"},
    "switched": {"times", "pieces"},
}
_KERNEL_PARAMS = {
    "zero": set(),
    "attraction_repulsion": {"a", "b"},
}


def _check_drift(drift: dict, dim: int) -> None:
    kind = drift.get("kind")
    if kind not in _DRIFT_PARAMS:
        raise FieldConfigError(f"unknown drift family {kind!r}")
    extra = set(drift) - _DRIFT_PARAMS[kind] - {"kind"}
    if extra:
        raise FieldConfigError(f"unexpected parameters for drift {kind!r}: {sorted(extra)}")
    if kind == "constant" and len(drift.get("velocity", ())) != dim:
        raise FieldConfigError(f"constant drift needs a velocity of length {dim}")
    if kind == "rotation":
        if dim < 2:
            raise FieldConfigError("rotation drift needs dim >= 2")
        if "rate" not in drift:
            raise FieldConfigError("rotation drift needs a rate")
        if len(drift.get("center", (0.0, 0.0))) != 2:
            raise FieldConfigError("rotation center must have two coordinates")
    if kind == "switched":
        times, pieces = list(drift.get("times", ())), list(drift.get("pieces", ()))
        if len(pieces) != len(times) + 1:
            raise FieldConfigError("switched drift needs len(pieces) == len(times) + 1")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise FieldConfigError("switching times must increase")
        for piece in pieces:
            if piece.get("kind") == "switched":
                raise FieldConfigError("switched drifts cannot be nested")
            _check_drift(piece, dim)


@dataclass(frozen=True)
class NonlocalFieldSpec:
    """``V_t(x, mu) = drift(t, x) + (1/N) sum_j K(x - y_j)``.

    Drift families: ``zero``, ``constant`` (``velocity``), ``rotation``
    (``rate``, ``center``; rotates the first two coordinates) and ``switched``
    (``times``, ``pieces``). Kernels: ``zero`` and ``attraction_repulsion``
    with ``K(z) = (a - b|z|) z``.
    """

    dim: int
    drift: dict = field(default_factory=lambda: {"kind": "zero"})
    kernel: dict = field(default_factory=lambda: {"kind": "zero"})

    def __post_init__(self):
        if self.dim < 1:
            raise FieldConfigError("dim must be positive")
        _check_drift(self.drift, self.dim)
        kind = self.kernel.get("kind")
        if kind not in _KERNEL_PARAMS:
            raise FieldConfigError(f"unknown kernel family {kind!r}")
        extra = set(self.kernel) - _KERNEL_PARAMS[kind] - {"kind"}
        if extra:
            raise FieldConfigError(f"unexpected parameters for kernel {kind!r}: {sorted(extra)}")


def _drift(drift: dict, t: float, x: np.ndarray) -> np.ndarray:
    kind = drift["kind"]
    if kind == "zero":
        return np.zeros_like(x)
    if kind == "constant":
        return np.broadcast_to(np.asarray(drift["velocity"], dtype=float), x.shape).copy()
    if kind == "rotation":
        c = np.asarray(drift.get("center", (0.0, 0.0)), dtype=float)
        out = np.zeros_like(x)
        rel = x[:, :2] - c
        out[:, 0] = -drift["rate"] * rel[:, 1]
        out[:, 1] = drift["rate"] * rel[:, 0]
        return out
    if kind == "switched":
        k = int(np.searchsorted(np.asarray(drift["times"], dtype=float), t, side="right"))
        return _drift(drift["pieces"][k], t, x)
    raise FieldConfigError(f"unknown drift family {kind!r}")


def _interaction(kernel: dict, x: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    kind = kernel["kind"]
    if kind == "zero":
        return np.zeros_like(x)
    if kind == "attraction_repulsion":
        a, b = float(kernel.get("a", 0.0)), float(kernel.get("b", 0.0))
        if b == 0.0:
            return a * (x - atoms.mean(axis=0))
        z = x[:, None, :] - atoms[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", z, z))
        return np.einsum("ij,ijk->ik", a - b * r, z) / atoms.shape[0]
    raise FieldConfigError(f"unknown kernel family {kind!r}")


def field_velocity(spec: NonlocalFieldSpec, t: float, x: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Vectorized ``V_t(x_k, mu)`` for query points ``x`` (M, d) and atoms of ``mu`` (N, d)."""
    return _drift(spec.drift, t, x) + _interaction(spec.kernel, x, atoms)


def eval_field(spec: NonlocalFieldSpec, t: float, x, mu) -> np.ndarray:
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    return field_velocity(spec, t, pt, as_measure(mu).points)[0]


# --------------------------------------------------------------------------
# bound estimation


class FieldBounds(NamedTuple):
    M_sup: float
    M_lip_x: float
    M_lip_mu: float
    probe_domain: BoxDomain
    probes: int
    seed: int


def estimate_bounds(
    spec: NonlocalFieldSpec,
    domain: BoxDomain,
    probes: int = 200,
    seed: int = 0,
    t_span: tuple[float, float] = (0.0, 1.0),
    cloud_size: int = 16,
) -> FieldBounds:
    """Empirical sup-norm and Lipschitz constants of ``V`` over random probes.

    Each probe draws a time, two points and two clouds of ``cloud_size`` atoms
    uniformly in ``domain``. These are estimates, not certified bounds.
    """
    if probes < 2:
        raise ValueError("need at least two probes")
    if domain.is_degenerate():
        raise ValueError("probe domain must have positive volume")
    rng = np.random.default_rng(seed)
    lo, hi = domain.lo, domain.hi
    m_sup = lip_x = lip_mu = 0.0
    for _ in range(probes):
        t = rng.uniform(*t_span)
        x = rng.uniform(lo, hi, size=(2, domain.dim))
        mu = rng.uniform(lo, hi, size=(cloud_size, domain.dim))
        nu = rng.uniform(lo, hi, size=(cloud_size, domain.dim))
        v_mu = field_velocity(spec, t, x, mu)
        v_nu = field_velocity(spec, t, x[:1], nu)
        m_sup = max(m_sup, float(np.linalg.norm(v_mu, axis=1).max()))
        dx = np.linalg.norm(x[0] - x[1])
        if dx > 0:
            lip_x = max(lip_x, float(np.linalg.norm(v_mu[0] - v_mu[1]) / dx))
        dmu = w2(mu, nu)
        if dmu > 0:
            lip_mu = max(lip_mu, float(np.linalg.norm(v_mu[0] - v_nu[0]) / dmu))
    return FieldBounds(m_sup, lip_x, lip_mu, domain, probes, seed)


# --------------------------------------------------------------------------
# trajectories


@dataclass(eq=False)
class Trajectory:
    """Particle positions and velocities on a time grid.

    ``positions`` and ``velocities`` have shape ``(K + 1, N, d)``.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    spec: NonlocalFieldSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")
        if self.positions.shape[0] != self.times.size:
            raise ValueError("one state per time is required")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def state(self, k: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.positions[k])

    @property
    def states(self) -> list[DiscreteMeasure]:
        return [self.state(k) for k in range(self.times.size)]

    def final(self) -> DiscreteMeasure:
        return self.state(-1)

    def at(self, t) -> np.ndarray:
        """Cubic Hermite interpolation of the particle positions at time(s) ``t``."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(ts < self.times[0] - 1e-12) or np.any(ts > self.times[-1] + 1e-12):
            raise ValueError(f"time outside [{self.times[0]}, {self.times[-1]}]")
        k = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, self.times.size - 2)
        h = self.times[k + 1] - self.times[k]
        tau = ((ts - self.times[k]) / h)[:, None, None]
        hh = h[:, None, None]
        h00 = 2 * tau**3 - 3 * tau**2 + 1
        h10 = tau**3 - 2 * tau**2 + tau
        h01 = -2 * tau**3 + 3 * tau**2
        h11 = tau**3 - tau**2
        out = (
            h00 * self.positions[k]
            + h10 * hh * self.velocities[k]
            + h01 * self.positions[k + 1]
            + h11 * hh * self.velocities[k + 1]
        )
        return out if np.ndim(t) else out[0]


def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid from 0 to ``T`` with the last step shortened to land on ``T``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("T must be at least dt")
    k = int(np.ceil(T / dt - 1e-9))
    times = np.arange(k + 1, dtype=float) * dt
    times[-1] = T
    return times


def integrate_rk4(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    times: np.ndarray,
    on_step: Callable[[int, float, np.ndarray], None] | None = None,
):
    """Classical RK4 over ``times``; returns ``(positions, velocities)``.

    ``on_step(k, t_k, x_k)`` runs before step ``k`` and may update state the
    right-hand side depends on (for instance a held control field).
    The last stage is evaluated one ulp before the step end, so a drift that
    switches exactly on a grid time is seen as constant on each step.
    """
    positions = np.empty((times.size,) + x0.shape)
    velocities = np.empty_like(positions)
    x = np.array(x0, dtype=float)
    positions[0] = x
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        if on_step is not None:
            on_step(k, t, x)
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(np.nextafter(t + h, t), x + h * k3)
        velocities[k] = k1
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(float(times[k + 1]))
        positions[k + 1] = x
    if on_step is not None:
        on_step(times.size - 1, times[-1], x)
    velocities[-1] = rhs(times[-1], x)
    return positions, velocities


def solve_reference(spec: NonlocalFieldSpec, rho0, T: float, dt: float) -> Trajectory:
    """Uncontrolled particle solution from ``rho0`` on ``[0, T]``."""
    rho0 = as_measure(rho0)
    if rho0.dim != spec.dim:
        raise ValueError("initial measure and field have different dimensions")
    times = time_grid(T, dt)

    def rhs(t, x):
        return field_velocity(spec, t, x, x)

    pos, vel = integrate_rk4(rhs, rho0.points, times)
    return Trajectory(times, pos, vel, spec, {"dt": dt})


def flow_map(traj: Trajectory, x, t0: float, t1: float) -> np.ndarray:
    """Transport a test point through ``(t, x) -> V_t(x, mu_t)`` from ``t0`` to ``t1``.

    The measure path is the Hermite interpolant of the stored particle states;
    the step is the trajectory's largest step.
    """
    if traj.spec is None:
        raise ValueError("trajectory has no field specification")
    lo, hi = traj.times[0], traj.times[-1]
    for t in (t0, t1):
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise ValueError(f"time {t} outside [{lo}, {hi}]")
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    if t1 == t0:
        return pt[0].copy()
    h_max = float(np.max(np.diff(traj.times)))
    steps = max(1, int(np.ceil(abs(t1 - t0) / h_max - 1e-9)))
    h = (t1 - t0) / steps
    spec = traj.spec

    def rhs(t, y):
        return field_velocity(spec, t, y, traj.at(min(max(t, lo), hi)))

    t = t0
    for _ in range(steps):
        k1 = rhs(t, pt)
        k2 = rhs(t + 0.5 * h, pt + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, pt + 0.5 * h * k2)
        k4 = rhs(np.nextafter(t + h, t), pt + h * k3)
        pt = pt + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t + h
    return pt[0]


# --------------------------------------------------------------------------
# crossing condition


class A2Result(NamedTuple):
    verdict: bool
    hitting_times: np.ndarray  # nan where the atom never enters omega

    @property
    def missing(self) -> np.ndarray:
        return np.flatnonzero(np.isnan(self.hitting_times))


def _inside(omega: list[BoxDomain], pts: np.ndarray) -> np.ndarray:
    flat = pts.reshape(-1, pts.shape[-1])
    mask = np.zeros(flat.shape[0], dtype=bool)
    for box in omega:
        mask |= box.contains(flat)
    return mask.reshape(pts.shape[:-1])


def check_A2(traj: Trajectory, omega: list[BoxDomain], substeps: int = 4) -> A2Result:
    """First time each initial atom's path enters ``omega`` (open boxes).

    Paths are scanned at ``dt / substeps`` on the Hermite interpolant; entry
    times are refined by bisection. The verdict is true iff every atom enters
    before ``T``.
    """
    if not omega:
        raise ValueError("omega must contain at least one box")
    times = traj.times
    fine = np.concatenate(
        [np.linspace(a, b, substeps, endpoint=False) for a, b in zip(times[:-1], times[1:])]
        + [times[-1:]]
    )
    paths = traj.at(fine)  # (F, N, d)
    inside = _inside(omega, paths)
    hit_any = inside.any(axis=0)
    first = np.argmax(inside, axis=0)
    hits = np.full(traj.n, np.nan)
    for i in np.flatnonzero(hit_any):
        j = first[i]
        if j == 0:
            hits[i] = float(fine[0])
            continue
        a, b = fine[j - 1], fine[j]
        for _ in range(50):
            m = 0.5 * (a + b)
            if _inside(omega, traj.at(m)[i][None])[0]:
                b = m
            else:
                a = m
        hits[i] = b
    verdict = bool(np.all(hit_any) and np.all(hits < traj.T))
    return A2Result(verdict, hits)
