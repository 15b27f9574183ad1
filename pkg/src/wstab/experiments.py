"""Experiment drivers: stabilization rates, enlargement steering and the
atom-counting obstruction on the unit interval."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .control import Budget, FeedbackPolicy, build_cutoff, solve_controlled
from .dynamics import NonlocalFieldSpec, Trajectory, check_A2, solve_reference
from .io import to_jsonable
from .measures import BoxDomain, DiscreteMeasure, discretize_uniform
from .transport import Geodesic, NonUniquePlan, geodesic, w2

__all__ = [
    "A2Error",
    "CellRecord",
    "ControlParams",
    "CounterexampleRow",
    "EnlargementReport",
    "MeasureRecipe",
    "RateReport",
    "Scenario",
    "ScenarioError",
    "StartingPoint",
    "alpha",
    "build_starting_set",
    "drift_through_slab",
    "fit_power_law",
    "run_counterexample",
    "run_enlargement_experiment",
    "run_rate_experiment",
    "sample_target",
]

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class A2Error(ScenarioError):
    def __init__(self, missing: np.ndarray):
        super().__init__([f"{missing.size} atoms of rho0 never enter omega before T"])
        self.missing = missing


@dataclass(frozen=True)
class MeasureRecipe:
    box: BoxDomain
    n: int = 256
    mode: str = "grid"
    seed: int = 0

    def build(self) -> DiscreteMeasure:
        return discretize_uniform(self.box, self.n, seed=self.seed, mode=self.mode)


@dataclass(frozen=True)
class ControlParams:
    gain: float = 5.0
    delta: float | None = None  # None: 10% of the smallest omega edge
    sup_bound: float = math.inf
    lip_bound: float = math.inf
    resync_every: int = 1


@dataclass(frozen=True)
class Scenario:
    field: NonlocalFieldSpec
    rho0: MeasureRecipe
    Omega: BoxDomain
    omega: tuple[BoxDomain, ...]
    T: float
    dt: float = 1e-2
    control: ControlParams = ControlParams()
    eps_grid: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    targets: int = 5
    target_seed: int = 0
    r: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(self.omega))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))

    @property
    def dim(self) -> int:
        return self.field.dim

    @property
    def delta(self) -> float:
        return build_cutoff(self.omega, self.control.delta).delta

    def validate(self) -> list[str]:
        errs = []
        d = self.field.dim
        if self.rho0.box.dim != d or self.Omega.dim != d or any(b.dim != d for b in self.omega):
            errs.append("dim: boxes must match the field dimension")
        if self.rho0.n < 1:
            errs.append("n_particles: must be positive")
        if not self.dt > 0:
            errs.append("dt: must be positive")
        if not self.T >= self.dt:
            errs.append("T: must be at least dt")
        if not 0 < self.r <= 0.5:
            errs.append("experiment.r: must lie in (0, 1/2]")
        bad = [e for e in self.eps_grid if not 0 < e <= self.r]
        if bad:
            errs.append(f"experiment.eps: values {bad} outside (0, r={self.r}]")
        if not self.omega:
            errs.append("omega.box: at least one box is required")
        elif any(b.is_degenerate() for b in self.omega):
            errs.append("omega.box: boxes must have positive volume")
        if self.Omega.dim == self.rho0.box.dim and not self.Omega.contains_box(self.rho0.box):
            errs.append("Omega.box: must contain rho0.box")
        if self.rho0.mode not in ("grid", "random"):
            errs.append("rho0.mode: must be 'grid' or 'random'")
        c = self.control
        if c.gain < 0:
            errs.append("control.gain: must be nonnegative")
        if c.delta is not None and not c.delta > 0:
            errs.append("control.delta: must be positive")
        if not (c.sup_bound > 0 and c.lip_bound > 0):
            errs.append("control.sup_bound/lip_bound: must be positive")
        if c.resync_every < 1:
            errs.append("control.resync_every: must be at least 1")
        if self.targets < 1:
            errs.append("experiment.targets: must be positive")
        return errs

    def check(self) -> None:
        errs = self.validate()
        if errs:
            raise ScenarioError(errs)

    def policy(self) -> FeedbackPolicy:
        c = self.control
        return FeedbackPolicy(
            c.gain, build_cutoff(self.omega, c.delta), Budget(c.sup_bound, c.lip_bound)
        )

    def with_gain(self, gain: float) -> Scenario:
        return replace(self, control=replace(self.control, gain=float(gain)))


def drift_through_slab(
    n: int = 256,
    eps_grid=(0.2, 0.1, 0.05, 0.025),
    targets: int = 5,
    gain: float = 5.0,
    sup_bound: float = math.inf,
    lip_bound: float = 0.5,
    T: float = 4.0,
    dt: float = 0.02,
) -> Scenario:
    """Unit-speed drift along ``e_1`` carrying ``[0,1]^2`` through the slab
    ``{2 < x_1 < 3}``; every characteristic spends one time unit in the slab.

    With a binding Lipschitz cap the effective feedback gain grows as the
    mismatch shrinks, which is what makes the final error superlinear in eps.
    """
    return Scenario(
        field=NonlocalFieldSpec(2, {"kind": "constant", "velocity": [1.0, 0.0]}),
        rho0=MeasureRecipe(BoxDomain((0.0, 0.0), (1.0, 1.0)), n, "grid"),
        Omega=BoxDomain((-0.5, -0.5), (1.5, 1.5)),
        omega=(BoxDomain((2.0, -10.0), (3.0, 10.0)),),
        T=T,
        dt=dt,
        control=ControlParams(gain=gain, sup_bound=sup_bound, lip_bound=lip_bound),
        eps_grid=tuple(eps_grid),
        targets=targets,
        r=max(eps_grid),
    )


# --------------------------------------------------------------------------
# starting set


def sample_target(
    Omega: BoxDomain, n: int, seed: int = 0, boxes: list[BoxDomain] | None = None
) -> DiscreteMeasure:
    """Mixture of 1-4 uniform blobs in ``Omega`` (or of the given ``boxes``).

    Atoms are split as evenly as possible between blobs; anything outside
    ``Omega`` (only possible with explicit ``boxes``) is clamped onto it.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if boxes is None:
        k = int(rng.integers(1, 5))
        boxes = []
        for _ in range(k):
            half = rng.uniform(0.1, 0.5, size=Omega.dim) * Omega.edges
            # blobs are drawn inside Omega so the clamp below only guards
            # against caller-supplied boxes; clamped atoms on a face create
            # exact ties against grid sources
            center = rng.uniform(Omega.lo + half, Omega.hi - half)
            boxes.append(BoxDomain(center - half, center + half))
    counts = np.full(len(boxes), n // len(boxes))
    counts[: n % len(boxes)] += 1
    pts = np.concatenate(
        [rng.uniform(b.lo, b.hi, size=(c, Omega.dim)) for b, c in zip(boxes, counts)]
    )
    return DiscreteMeasure(Omega.clamp(pts))


class StartingPoint(NamedTuple):
    target_id: int
    eps: float
    measure: DiscreteMeasure
    geodesic: Geodesic


def build_starting_set(rho0, targets, eps_grid) -> list[StartingPoint]:
    """Points ``g(eps)`` on the geodesics from ``rho0`` to each target.

    Targets whose optimal plan is not unique are skipped with a warning.
    """
    out = []
    for tid, target in enumerate(targets):
        try:
            g = geodesic(rho0, target)
        except NonUniquePlan as exc:
            log.warning("skipping target %d: %s", tid, exc)
            continue
        for eps in eps_grid:
            out.append(StartingPoint(tid, float(eps), g.eval(eps), g))
    return out


# --------------------------------------------------------------------------
# rate experiment


def fit_power_law(eps, values) -> tuple[float, float, float, np.ndarray]:
    """Least squares ``log v = p log eps + log C``; returns ``(p, log C, R^2, residuals)``."""
    x = np.log(np.asarray(eps, dtype=float))
    v = np.asarray(values, dtype=float)
    if np.unique(x).size < 3:
        raise ValueError("a rate fit needs at least three distinct eps values")
    if np.any(v <= 0):
        raise ValueError("final errors must be positive to fit in log scale")
    y = np.log(v)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (p, logc), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (p * x + logc)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return float(p), float(logc), r2, resid


@dataclass(frozen=True)
class CellRecord:
    target_id: int
    eps: float
    initial_w2: float
    final_w2: float
    wall_time: float
    admissible: bool


@dataclass
class RateReport:
    records: list[CellRecord]
    p: float
    log_C: float
    r2: float
    residuals: list[float]
    meta: dict = field(default_factory=dict)

    @property
    def kappa_hat(self) -> float:
        return self.p - 1.0

    @property
    def C(self) -> float:
        return math.exp(self.log_C)

    @property
    def all_admissible(self) -> bool:
        return all(r.admissible for r in self.records)

    def monotone_in_eps(self, rtol: float = 0.0) -> bool:
        """Final error nondecreasing in eps for every target."""
        by_target: dict[int, list[CellRecord]] = {}
        for r in self.records:
            by_target.setdefault(r.target_id, []).append(r)
        for recs in by_target.values():
            vals = [r.final_w2 for r in sorted(recs, key=lambda r: r.eps)]
            if any(b < a * (1 - rtol) for a, b in zip(vals, vals[1:])):
                return False
        return True

    def summary(self) -> dict:
        return {
            "p": self.p,
            "kappa_hat": self.kappa_hat,
            "C": self.C,
            "log_C": self.log_C,
            "r2": self.r2,
            "all_admissible": self.all_admissible,
            "cells": len(self.records),
            "residuals": list(self.residuals),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(to_jsonable(self.summary()), indent=2)

    def rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("WSTAB_THREADS", "1")))
    except ValueError:
        return 1


def _reference(sc: Scenario) -> tuple[DiscreteMeasure, Trajectory]:
    sc.check()
    rho0 = sc.rho0.build()
    ref = solve_reference(sc.field, rho0, sc.T, sc.dt)
    a2 = check_A2(ref, list(sc.omega))
    if not a2.verdict:
        raise A2Error(a2.missing)
    return rho0, ref


def _targets(sc: Scenario, n: int) -> list[DiscreteMeasure]:
    return [sample_target(sc.Omega, n, seed=sc.target_seed + i) for i in range(sc.targets)]


def _run_cells(sc: Scenario, ref: Trajectory, starts, initial) -> list[CellRecord]:
    policy = sc.policy()
    final_ref = ref.final()

    def cell(k):
        sp = starts[k]
        t0 = time.perf_counter()
        traj = solve_controlled(
            sc.field, policy, sp.measure, ref, sc.T, sc.dt, sc.control.resync_every
        )
        return CellRecord(
            sp.target_id,
            sp.eps,
            float(initial[k]),
            w2(traj.final(), final_ref),
            time.perf_counter() - t0,
            bool(traj.meta["admissible"]),
        )

    workers = _workers()
    if workers == 1:
        records = [cell(k) for k in range(len(starts))]
    else:
        with ThreadPoolExecutor(workers) as ex:
            records = list(ex.map(cell, range(len(starts))))
    return sorted(records, key=lambda r: (r.target_id, r.eps))


def _meta(sc: Scenario) -> dict:
    return {
        "seed": sc.seed,
        "target_seed": sc.target_seed,
        "targets": sc.targets,
        "eps_grid": list(sc.eps_grid),
        "dt": sc.dt,
        "T": sc.T,
        "n": sc.rho0.n,
        "gain": sc.control.gain,
        "delta": sc.delta,
        "sup_bound": sc.control.sup_bound,
        "lip_bound": sc.control.lip_bound,
        "resync_every": sc.control.resync_every,
        "note": "empirical fit for the OT-matched feedback; not the theoretical constants",
    }


def run_rate_experiment(sc: Scenario) -> RateReport:
    """Stabilize every starting point ``g(eps)`` toward the reference and fit
    ``final ~ C eps^p``. Refuses to run when the crossing condition fails."""
    rho0, ref = _reference(sc)
    starts = build_starting_set(rho0, _targets(sc, rho0.n), sc.eps_grid)
    if not starts:
        raise ScenarioError(["no target produced a unique geodesic"])
    initial = [w2(sp.measure, rho0) for sp in starts]
    records = _run_cells(sc, ref, starts, initial)
    p, logc, r2, resid = fit_power_law([r.eps for r in records], [r.final_w2 for r in records])
    return RateReport(records, p, logc, r2, resid.tolist(), _meta(sc))


# --------------------------------------------------------------------------
# enlargement


def alpha(r: float, kappa: float) -> float:
    """Enlargement radius ``-r^(1 + kappa) / log r`` for ``0 < r < 1``."""
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    return -(r ** (1.0 + kappa)) / math.log(r)


@dataclass
class EnlargementReport:
    report: RateReport
    alpha: float
    C1: float
    bound: float
    slack: float
    ok: bool
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {
            "alpha": self.alpha,
            "C1": self.C1,
            "bound": self.bound,
            "slack": self.slack,
            "ok": self.ok,
            "max_final": max(r.final_w2 for r in self.report.records),
        }
        out.update(self.report.summary())
        out["meta"] = {**self.report.meta, **self.meta}
        return out

    def to_json(self) -> str:
        return json.dumps(to_jsonable(self.summary()), indent=2)


def run_enlargement_experiment(
    sc: Scenario,
    kappa_hat: float,
    r: float,
    base: RateReport | None = None,
    scale: float = 0.99,
    seed: int | None = None,
    slack: float = 3.0,
) -> EnlargementReport:
    """Stabilize random displacements of size ``scale * alpha(r)`` of each
    starting point and compare with ``slack * C1 * r^(1 + kappa_hat)``.

    ``C1`` is fitted on the unperturbed run with the slope fixed to
    ``1 + kappa_hat``.
    """
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    if base is None:
        base = run_rate_experiment(sc)
    a = alpha(r, kappa_hat)
    slope = 1.0 + kappa_hat
    logs = [math.log(c.final_w2) - slope * math.log(c.eps) for c in base.records]
    c1 = math.exp(float(np.mean(logs)))
    bound = slack * c1 * r**slope

    rho0, ref = _reference(sc)
    starts = build_starting_set(rho0, _targets(sc, rho0.n), sc.eps_grid)
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    moved = []
    for sp in starts:
        d = rng.normal(size=sp.measure.points.shape)
        # identity coupling: w2 of the displacement is at most its L2 size
        d *= scale * a / math.sqrt((d**2).sum(axis=1).mean())
        moved.append(sp._replace(measure=DiscreteMeasure(sp.measure.points + d)))
    initial = [w2(sp.measure, rho0) for sp in moved]
    records = _run_cells(sc, ref, moved, initial)
    p, logc, r2, resid = fit_power_law([c.eps for c in records], [c.final_w2 for c in records])
    report = RateReport(records, p, logc, r2, resid.tolist(), _meta(sc))
    ok = all(c.final_w2 <= bound for c in records) and report.all_admissible
    meta = {"kappa_hat": kappa_hat, "r": r, "scale": scale}
    return EnlargementReport(report, a, c1, bound, slack, ok, meta)


# --------------------------------------------------------------------------
# atom-counting obstruction on [0, 1]


class CounterexampleRow(NamedTuple):
    n: int
    eps_n: float
    w2: float
    analytic: float
    rel_gap: float
    relocation_min_w2: float
    distinct_sites: int


def _blocks_w2(sites: np.ndarray, grid: np.ndarray) -> float:
    # equal-mass sites against a sorted grid: sorted sites take consecutive blocks
    m = grid.size // sites.size
    s = np.repeat(np.sort(sites), m)
    return float(np.sqrt(np.mean((grid - s) ** 2)))


def _relocation_search(k: int, grid: np.ndarray, rng, restarts: int = 8, sweeps: int = 20) -> float:
    """Smallest w2 to ``grid`` found over positions of ``k`` equal-mass sites.

    Random restarts followed by block-mean updates and jitter proposals; any
    Lipschitz flow maps the ``k`` sites of the atomic measure to ``k`` sites,
    so this bounds what such a flow can reach.
    """
    m = grid.size // k
    blocks = grid.reshape(k, m)
    best = math.inf
    for _ in range(restarts):
        sites = np.sort(rng.uniform(0.0, 1.0, size=k))
        cur = _blocks_w2(sites, grid)
        for _ in range(sweeps):
            trial = np.sort(sites + rng.normal(scale=0.5 / k, size=k))
            val = _blocks_w2(trial, grid)
            if val < cur:
                sites, cur = trial, val
            means = blocks.mean(axis=1)
            val = _blocks_w2(means, grid)
            if val < cur:
                sites, cur = means, val
        best = min(best, cur)
    return best


def run_counterexample(n_max: int, N_grid: int, seed: int = 0) -> list[CounterexampleRow]:
    """Distance from the uniform grid on ``[0, 1]`` to ``2^(n-1)`` equal atoms
    at ``(2k - 1) / 2^n``, against ``eps_n / (2 sqrt 3)`` with ``eps_n = 2^(1-n)``."""
    if n_max < 1 or N_grid < 1:
        raise ValueError("n_max and N_grid must be positive")
    if N_grid % 2 ** (n_max - 1):
        raise ValueError(f"N_grid={N_grid} is not a multiple of 2^(n_max-1)={2 ** (n_max - 1)}")
    grid = (2.0 * np.arange(1, N_grid + 1) - 1.0) / (2.0 * N_grid)
    rho0 = DiscreteMeasure(grid)
    rng = np.random.default_rng(seed)
    rows = []
    for n in range(1, n_max + 1):
        k = 2 ** (n - 1)
        eps = 2.0 ** (1 - n)
        sites = (2.0 * np.arange(1, k + 1) - 1.0) / 2.0**n
        atoms = DiscreteMeasure(np.repeat(sites, N_grid // k))
        dist = w2(atoms, rho0)
        exact = eps / (2.0 * math.sqrt(3.0))
        rows.append(
            CounterexampleRow(
                n,
                eps,
                dist,
                exact,
                abs(dist - exact) / exact,
                _relocation_search(k, grid, rng),
                int(np.unique(atoms.points).size),
            )
        )
    return rows
