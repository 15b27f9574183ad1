"""The acceptance suite, shared by ``wstab verify`` and the test-suite.

Each check returns a :class:`CheckResult`; none of them raise on failure.
"""

from __future__ import annotations

import itertools
import math
import time
from typing import Callable, NamedTuple

import numpy as np

from .convexity import (
    MonotoneSampleMap,
    NotProlongable,
    certify_regular_perturbation,
    map_continuity_probe,
    prolong_geodesic,
    resolvent_apply,
    yosida_apply,
)
from .dynamics import NonlocalFieldSpec, check_A2, solve_reference
from .experiments import drift_through_slab, run_counterexample, run_rate_experiment, sample_target
from .measures import BoxDomain, DiscreteMeasure, discretize_uniform
from .transport import (
    NonUniquePlan,
    check_monotone_optimal,
    geodesic,
    intermediate_map,
    solve_assignment,
    sq_distances,
    w2,
)

__all__ = ["CHECKS", "CheckResult", "run_checks"]


class CheckResult(NamedTuple):
    number: int
    title: str
    passed: bool
    detail: dict
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number}: {self.title} ({self.seconds:.1f}s) {self.detail}"


def _random_geodesic(rng, n: int, d: int = 2):
    while True:
        mu = rng.uniform(0.0, 1.0, size=(n, d))
        nu = rng.uniform(0.0, 1.0, size=(n, d)) + rng.normal(scale=0.5, size=d)
        try:
            return geodesic(mu, nu)
        except NonUniquePlan:
            continue


def counterexample_values() -> dict:
    t0 = time.perf_counter()
    rows = run_counterexample(6, 4096)
    fine = run_counterexample(3, 8192)[2]
    ratio = rows[2].rel_gap / fine.rel_gap
    worst = max(r.rel_gap for r in rows)
    lower_ok = all(r.relocation_min_w2 >= r.analytic * (1 - 1e-3) for r in rows)
    elapsed = time.perf_counter() - t0
    return {
        "passed": worst <= 1e-3 and ratio >= 1.8 and lower_ok and elapsed < 60,
        "runtime_s": elapsed,
        "max_rel_gap": worst,
        "refinement_ratio": ratio,
        "relocation_lower_bound_ok": lower_ok,
    }


def intermediate_lipschitz(trials: int = 100, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    violations, worst = 0, 0.0
    for _ in range(trials):
        g = _random_geodesic(rng, 64)
        a, b = np.sort(rng.uniform(0.1, 0.9, size=2))
        _, fwd = intermediate_map(g, a, b)
        _, bwd = intermediate_map(g, b, a)
        r_fwd = fwd.bound / (b / a)
        r_bwd = bwd.bound / ((1 - a) / (1 - b))
        worst = max(worst, r_fwd, r_bwd)
        violations += (r_fwd > 1 + 1e-9) + (r_bwd > 1 + 1e-9)
    return {"passed": violations == 0, "violations": violations, "max_ratio_to_limit": worst}


def constant_speed(geodesics: int = 10, pairs: int = 100, seed: int = 1) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(geodesics):
        g = _random_geodesic(rng, 32)
        for s, t in rng.uniform(0.0, 1.0, size=(pairs, 2)):
            err = abs(w2(g.eval(s), g.eval(t)) - abs(t - s) * g.length) / g.length
            worst = max(worst, err)
    return {"passed": worst <= 1e-9, "max_rel_error": worst}


def regular_perturbations(trials: int = 50, seed: int = 2) -> dict:
    rng = np.random.default_rng(seed)
    box = BoxDomain((0.0, 0.0), (1.0, 1.0))
    Omega = BoxDomain((-1.0, -1.0), (2.0, 2.0))
    failures, max_lip, min_margin = 0, 0.0, math.inf
    for k in range(trials):
        rho0 = discretize_uniform(box, 128, seed=int(rng.integers(2**31)), mode="random")
        try:
            g = geodesic(rho0, sample_target(Omega, 128, seed=seed * 1000 + k))
        except NonUniquePlan:
            continue
        rep = certify_regular_perturbation(g, [0.0, 0.1, 0.25, 0.5])
        failures += not rep.verdict
        max_lip = max(max_lip, rep.max_lip)
        min_margin = min(min_margin, rep.L_at_r - max(rep.max_lip, rep.max_identity_gap_over_eps))
    return {"passed": failures == 0, "failures": failures, "max_lip": max_lip, "min_margin_to_L": min_margin}


def resolvent_identities(trials: int = 100, seed: int = 3) -> dict:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 2))
    closed = 0.0
    for lam in (0.1, 0.5, 1.0, 3.0):
        m = MonotoneSampleMap(x, x)
        res, yos = resolvent_apply(m, lam), yosida_apply(m, lam)
        z = (1 + lam) * x
        closed = max(
            closed,
            np.abs(res.inputs - z).max(),
            np.abs(res.outputs - z / (1 + lam)).max(),
            np.abs(yos.outputs - z / (1 + lam)).max(),
        )
    expansive = displaced = 0
    for _ in range(trials):
        d = int(rng.integers(1, 4))
        B = rng.normal(size=(d, d))
        A = B @ B.T
        pts = rng.normal(size=(30, d))
        g = pts @ A.T + rng.normal(size=d)
        lam = float(rng.uniform(0.05, 3.0))
        res = resolvent_apply(MonotoneSampleMap(pts, g), lam)
        din = np.sqrt(sq_distances(res.inputs, res.inputs))
        dout = np.sqrt(sq_distances(res.outputs, res.outputs))
        expansive += int(np.any(dout > din + 1e-12))
        R = np.linalg.norm(g, axis=1).max()
        displaced += int(np.any(np.linalg.norm(res.inputs - res.outputs, axis=1) > lam * R * (1 + 1e-12)))
    return {
        "passed": closed <= 1e-12 and expansive == 0 and displaced == 0,
        "closed_form_error": float(closed),
        "expansive_maps": expansive,
        "displacement_violations": displaced,
    }


def prolongation(trials: int = 50, seed: int = 4) -> dict:
    rng = np.random.default_rng(seed)
    uncertified, worst_overlap = 0, 0.0
    for _ in range(trials):
        g = _random_geodesic(rng, 32)
        s = float(rng.uniform(0.2, 0.8))
        pr = prolong_geodesic(g, s)
        uncertified += not check_monotone_optimal(pr.geodesic.plan)
        for u in np.linspace(s, 1.0, 7):
            gap = np.abs(pr.geodesic.positions(pr.extended_parameter(u)) - g.positions(u)).max()
            worst_overlap = max(worst_overlap, float(gap))
    rejected = 0
    degenerate = 10
    for _ in range(degenerate):
        mu = rng.uniform(size=(16, 2))
        nu = rng.uniform(size=(16, 2))
        nu[1] = nu[0]  # two atoms collapse: the map to the endpoint has ell = 0
        try:
            prolong_geodesic(geodesic(mu, nu), 0.5)
        except NotProlongable:
            rejected += 1
    return {
        "passed": uncertified == 0 and worst_overlap <= 1e-9 and rejected == degenerate,
        "uncertified": uncertified,
        "max_overlap_error": worst_overlap,
        "ell_le_0_rejected": f"{rejected}/{degenerate}",
    }


def _brute_force(x: np.ndarray, y: np.ndarray) -> float:
    n = x.shape[0]
    c = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
    return min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def assignment_exactness(trials: int = 200, seed: int = 5) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(trials):
        n, d = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        if k % 3 == 0:
            x = rng.integers(0, 3, size=(n, d)).astype(float)
            y = rng.integers(0, 3, size=(n, d)).astype(float)
        else:
            x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        plan = solve_assignment(x, y)
        cost = float(plan.pair_costs().sum())
        worst = max(worst, abs(cost - _brute_force(x, y)))
    return {"passed": worst <= 1e-12, "max_abs_error": worst}


def stabilization_rate() -> dict:
    sc = drift_through_slab()
    t0 = time.perf_counter()
    rep = run_rate_experiment(sc)
    base = run_rate_experiment(sc.with_gain(0.0))
    elapsed = time.perf_counter() - t0
    ok = (
        rep.p >= 1.05
        and rep.r2 >= 0.9
        and rep.all_admissible
        and 0.9 <= base.p <= 1.1
        and elapsed < 600
    )
    return {
        "passed": ok,
        "p": rep.p,
        "r2": rep.r2,
        "all_admissible": rep.all_admissible,
        "baseline_p": base.p,
        "runtime_s": elapsed,
    }


def a2_checker() -> dict:
    rho0 = discretize_uniform(BoxDomain((0.0, 0.0), (1.0, 1.0)), 256)
    omega = [BoxDomain((2.0, -10.0), (3.0, 10.0))]
    dt, speed = 0.02, 1.5
    fwd = solve_reference(NonlocalFieldSpec(2, {"kind": "constant", "velocity": [speed, 0.0]}), rho0, 4.0, dt)
    bwd = solve_reference(NonlocalFieldSpec(2, {"kind": "constant", "velocity": [-speed, 0.0]}), rho0, 4.0, dt)
    a = check_A2(fwd, omega)
    b = check_A2(bwd, omega)
    err = float(np.nanmax(np.abs(a.hitting_times - (2.0 - rho0.points[:, 0]) / speed)))
    return {
        "passed": a.verdict and err <= 2 * dt and not b.verdict,
        "forward_verdict": a.verdict,
        "max_hit_error": err,
        "reversed_verdict": b.verdict,
    }


def continuity_probe(seed: int = 6) -> dict:
    rng = np.random.default_rng(seed)
    rho = DiscreteMeasure(rng.uniform(size=(64, 2)))
    g = _random_geodesic(rng, 64)
    gaps = map_continuity_probe(rho, [g.eval(1.0 / k) for k in range(1, 11)], g.start)
    mono = all(gaps[i + 1] <= 1.1 * gaps[i] for i in range(len(gaps) - 1))
    return {
        "passed": bool(mono and gaps[-1] < gaps[0] / 5),
        "gaps": [round(float(v), 6) for v in gaps],
    }


CHECKS: dict[int, tuple[str, Callable[[], dict]]] = {
    1: ("counterexample values", counterexample_values),
    2: ("intermediate-map Lipschitz bounds", intermediate_lipschitz),
    3: ("constant-speed geodesics", constant_speed),
    4: ("regular-perturbation certification", regular_perturbations),
    5: ("resolvent/Yosida identities", resolvent_identities),
    6: ("geodesic prolongation", prolongation),
    7: ("assignment-solver exactness", assignment_exactness),
    8: ("stabilization rate", stabilization_rate),
    9: ("A2 checker", a2_checker),
    10: ("OT-map continuity probe", continuity_probe),
}


def run_check(number: int) -> CheckResult:
    title, fn = CHECKS[number]
    t0 = time.perf_counter()
    try:
        detail = fn()
    except Exception as exc:  # a crash is a failed criterion, not a crashed suite
        detail = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
    passed = bool(detail.pop("passed"))
    detail = {k: v.item() if isinstance(v, np.generic) else v for k, v in detail.items()}
    return CheckResult(number, title, passed, detail, time.perf_counter() - t0)


def run_checks(numbers=None, echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    out = []
    for k in numbers or sorted(CHECKS):
        res = run_check(k)
        if echo:
            echo(res.line())
        out.append(res)
    return out
