"""Command-line frontend.

Scenario files are flat ``key = value`` lines with dotted keys; values are
JSON (bare words are read as strings). ``#`` starts a comment.

    dim = 2
    T = 4.0
    field.drift.kind = constant
    field.drift.velocity = [1.0, 0.0]
    rho0.box = [[0, 0], [1, 1]]
    Omega.box = [[-0.5, -0.5], [1.5, 1.5]]
    omega.box.1 = [[2, -10], [3, 10]]
    control.lip_bound = 0.5
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .convexity import NotProlongable, certify_regular_perturbation, prolong_geodesic
from .dynamics import (
    BlowUpError,
    FieldConfigError,
    NonlocalFieldSpec,
    check_A2,
    estimate_bounds,
    solve_reference,
)
from .control import solve_controlled
from .experiments import (
    ControlParams,
    MeasureRecipe,
    Scenario,
    ScenarioError,
    build_starting_set,
    run_counterexample,
    run_enlargement_experiment,
    run_rate_experiment,
    sample_target,
)
from .measures import BoxDomain
from .transport import NonUniquePlan, geodesic

__all__ = ["RunConfig", "format_scenario", "main", "parse_scenario", "reachable_warnings"]

log = logging.getLogger("wstab")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

_SCALAR_KEYS = {
    "dim": int,
    "n_particles": int,
    "T": float,
    "dt": float,
    "seed": int,
    "rho0.mode": str,
    "control.gain": float,
    "control.delta": float,
    "control.sup_bound": float,
    "control.lip_bound": float,
    "control.resync_every": int,
    "experiment.r": float,
    "experiment.targets": int,
    "experiment.target_seed": int,
}
_BOX_KEYS = {"rho0.box", "Omega.box"}
_DEFAULTS = {
    "n_particles": 256,
    "dt": 1e-2,
    "seed": 0,
    "rho0.mode": "grid",
    "control.gain": 5.0,
    "control.sup_bound": math.inf,
    "control.lip_bound": math.inf,
    "control.resync_every": 1,
    "experiment.r": 0.5,
    "experiment.eps": [0.2, 0.1, 0.05, 0.025],
    "experiment.targets": 5,
    "experiment.target_seed": 0,
}
_REQUIRED = ("dim", "T", "rho0.box", "Omega.box")


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _box(value, key: str, errors: list[str]) -> BoxDomain | None:
    try:
        lo, hi = value
        return BoxDomain(tuple(map(float, lo)), tuple(map(float, hi)))
    except (TypeError, ValueError) as exc:
        errors.append(f"{key}: expected [[lower...], [upper...]] ({exc})")
        return None


def reachable_warnings(sc: Scenario) -> list[str]:
    """Flag action sets no characteristic can reach under a constant drift
    with no interaction."""
    drift, kernel = sc.field.drift, sc.field.kernel
    if drift.get("kind") != "constant" or kernel.get("kind") != "zero":
        return []
    shift = sc.T * np.asarray(drift["velocity"], dtype=float)
    lo = np.minimum(sc.rho0.box.lo, sc.rho0.box.lo + shift)
    hi = np.maximum(sc.rho0.box.hi, sc.rho0.box.hi + shift)
    if any(np.all(b.lo < hi) and np.all(b.hi > lo) for b in sc.omega):
        return []
    return ["omega: disjoint from the region swept by rho0 under the declared drift; A2 cannot hold"]


def parse_scenario(text: str, warnings: list[str] | None = None) -> Scenario:
    """Parse and validate a scenario file; every problem is reported at once
    through :class:`ScenarioError`. Geometry warnings go to ``warnings``."""
    errors: list[str] = []
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key in raw:
            errors.append(f"{key}: given more than once")
        raw[key] = _value(val)

    vals: dict[str, object] = dict(_DEFAULTS)
    drift: dict = {}
    kernel: dict = {}
    omega: dict[int, BoxDomain] = {}
    for key, val in raw.items():
        if key in _SCALAR_KEYS:
            typ = _SCALAR_KEYS[key]
            try:
                if typ is int and (isinstance(val, bool) or float(val) != int(float(val))):
                    raise ValueError
                vals[key] = typ(val) if typ is not int else int(float(val))
            except (TypeError, ValueError):
                errors.append(f"{key}: expected {typ.__name__}, got {val!r}")
        elif key in _BOX_KEYS:
            vals[key] = _box(val, key, errors)
        elif key == "experiment.eps":
            try:
                vals[key] = [float(v) for v in val]
            except (TypeError, ValueError):
                errors.append(f"{key}: expected a list of numbers")
        elif key.startswith("omega.box."):
            suffix = key.rsplit(".", 1)[1]
            if not suffix.isdigit() or int(suffix) < 1:
                errors.append(f"{key}: box index must be a positive integer")
                continue
            box = _box(val, key, errors)
            if box is not None:
                omega[int(suffix)] = box
        elif key.startswith("field.drift.") and key.count(".") == 2:
            drift[key.rsplit(".", 1)[1]] = val
        elif key.startswith("field.kernel.") and key.count(".") == 2:
            kernel[key.rsplit(".", 1)[1]] = val
        else:
            errors.append(f"{key}: unknown key")

    for key in _REQUIRED:
        if key not in raw:
            errors.append(f"{key}: required")
    if not omega:
        errors.append("omega.box.1: at least one action box is required")
    elif sorted(omega) != list(range(1, len(omega) + 1)):
        errors.append("omega.box.k: indices must run 1..K without gaps")

    spec = None
    if isinstance(vals.get("dim"), int):
        try:
            spec = NonlocalFieldSpec(
                vals["dim"], drift or {"kind": "zero"}, kernel or {"kind": "zero"}
            )
        except (FieldConfigError, TypeError) as exc:
            errors.append(f"field: {exc}")
    if spec is None or vals.get("rho0.box") is None or vals.get("Omega.box") is None or "T" not in vals:
        raise ScenarioError(errors or ["field: invalid"])

    sc = Scenario(
        field=spec,
        rho0=MeasureRecipe(vals["rho0.box"], vals["n_particles"], vals["rho0.mode"], vals["seed"]),
        Omega=vals["Omega.box"],
        omega=tuple(omega[k] for k in sorted(omega)),
        T=vals["T"],
        dt=vals["dt"],
        control=ControlParams(
            vals["control.gain"],
            vals.get("control.delta"),
            vals["control.sup_bound"],
            vals["control.lip_bound"],
            vals["control.resync_every"],
        ),
        eps_grid=tuple(vals["experiment.eps"]),
        targets=vals["experiment.targets"],
        target_seed=vals["experiment.target_seed"],
        r=vals["experiment.r"],
        seed=vals["seed"],
    )
    # keep going after syntax errors so one run reports everything
    errors += sc.validate()
    if sc.rho0.mode == "grid" and sc.rho0.n >= 1:
        k = round(sc.rho0.n ** (1.0 / sc.dim))
        if k**sc.dim != sc.rho0.n:
            errors.append(f"n_particles: grid mode needs a perfect {sc.dim}-th power")
    if errors:
        raise ScenarioError(errors)
    for w in reachable_warnings(sc):
        log.warning(w)
        if warnings is not None:
            warnings.append(w)
    return sc


def format_scenario(sc: Scenario) -> str:
    """Canonical text form; ``parse_scenario(format_scenario(sc)) == sc``."""

    def box(b: BoxDomain) -> str:
        return json.dumps([list(b.lower), list(b.upper)])

    lines = [
        f"dim = {sc.dim}",
        f"n_particles = {sc.rho0.n}",
        f"T = {sc.T!r}",
        f"dt = {sc.dt!r}",
        f"seed = {sc.seed}",
    ]
    for k, v in sc.field.drift.items():
        lines.append(f"field.drift.{k} = {json.dumps(v)}")
    for k, v in sc.field.kernel.items():
        lines.append(f"field.kernel.{k} = {json.dumps(v)}")
    lines += [f"rho0.box = {box(sc.rho0.box)}", f"rho0.mode = {sc.rho0.mode}", f"Omega.box = {box(sc.Omega)}"]
    lines += [f"omega.box.{i} = {box(b)}" for i, b in enumerate(sc.omega, 1)]
    c = sc.control
    lines += [f"control.gain = {c.gain!r}"]
    if c.delta is not None:
        lines.append(f"control.delta = {c.delta!r}")
    lines += [
        f"control.sup_bound = {json.dumps(c.sup_bound)}",
        f"control.lip_bound = {json.dumps(c.lip_bound)}",
        f"control.resync_every = {c.resync_every}",
        f"experiment.r = {sc.r!r}",
        f"experiment.eps = {json.dumps(list(sc.eps_grid))}",
        f"experiment.targets = {sc.targets}",
        f"experiment.target_seed = {sc.target_seed}",
    ]
    return "\n".join(lines) + "\n"


@dataclass
class RunConfig:
    scenario: Path | None = None
    out: Path = Path("wstab-out")
    seed: int | None = None
    overrides: dict = field(default_factory=dict)

    def load(self) -> Scenario:
        if self.scenario is None:
            raise ScenarioError(["--scenario: required for this subcommand"])
        try:
            text = Path(self.scenario).read_text()
        except OSError as exc:
            raise ScenarioError([f"--scenario: {exc}"]) from exc
        sc = parse_scenario(text)
        o = self.overrides
        if self.seed is not None:
            sc = replace(sc, seed=self.seed, rho0=replace(sc.rho0, seed=self.seed))
        if o.get("n") is not None:
            sc = replace(sc, rho0=replace(sc.rho0, n=o["n"]))
        if o.get("dt") is not None:
            sc = replace(sc, dt=o["dt"])
        if o.get("eps") is not None:
            sc = replace(sc, eps_grid=tuple(o["eps"]))
        if o.get("gain") is not None:
            sc = sc.with_gain(o["gain"])
        sc.check()
        return sc

    def outdir(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out


# --------------------------------------------------------------------------
# subcommands


def _load_pair(args):
    src, _ = io.read_measure(args.source)
    tgt, _ = io.read_measure(args.target)
    return src, tgt


def cmd_simulate(cfg: RunConfig, args) -> int:
    sc = cfg.load()
    rho0 = sc.rho0.build()
    ref = solve_reference(sc.field, rho0, sc.T, sc.dt)
    a2 = check_A2(ref, list(sc.omega))
    bounds = estimate_bounds(sc.field, sc.Omega, probes=64, seed=sc.seed)
    summary = {
        "A2": a2.verdict,
        "hitting_times": a2.hitting_times,
        "bounds": bounds._asdict(),
        "T": sc.T,
        "dt": sc.dt,
    }
    traj = ref
    if args.eps is not None:
        starts = build_starting_set(rho0, [sample_target(sc.Omega, rho0.n, sc.target_seed + args.target)], [args.eps])
        if not starts:
            raise NonUniquePlan("target geodesic is not unique")
        traj = solve_controlled(sc.field, sc.policy(), starts[0].measure, ref, sc.T, sc.dt, sc.control.resync_every)
        summary["admissible"] = traj.meta["admissible"]
        summary["start_eps"] = args.eps
    out = cfg.outdir()
    io.write_trajectory(out / "trajectory", traj, every=args.every)
    if traj is not ref and traj.meta["controls"]:
        io.write_control_field(out / "control_last.csv", traj.meta["controls"][-1])
    io.write_json(out / "simulate.json", summary)
    print(f"A2 verdict: {a2.verdict}; wrote {out / 'trajectory'}")
    return EXIT_OK


def cmd_geodesic(cfg: RunConfig, args) -> int:
    src, tgt = _load_pair(args)
    g = geodesic(src, tgt)
    plan = g.plan
    out = cfg.outdir()
    io.write_plan(out / "plan.csv", plan)
    for t in args.times:
        io.write_measure(out / f"geodesic_t{t:g}.csv", g.eval(t), t)
    io.write_json(out / "geodesic.json", {"w2": g.length, "cost": plan.cost, "times": args.times})
    print(f"w2 = {g.length:.12g}")
    return EXIT_OK


def cmd_prolong(cfg: RunConfig, args) -> int:
    src, tgt = _load_pair(args)
    pr = prolong_geodesic(geodesic(src, tgt), args.s, backward=args.backward)
    out = cfg.outdir()
    io.write_measure(out / "extended_end.csv", pr.geodesic.end)
    io.write_json(
        out / "prolong.json",
        {"s": pr.s, "ell": pr.ell, "factor": pr.factor, "reverse_lipschitz": pr.reverse_lipschitz,
         "backward": args.backward},
    )
    print(f"ell = {pr.ell:.6g}, factor = {pr.factor:.6g}")
    return EXIT_OK


def cmd_certify(cfg: RunConfig, args) -> int:
    src, tgt = _load_pair(args)
    eps = args.eps_list or [0.0, 0.1, 0.25, 0.5]
    if any(not 0 <= e <= 0.5 for e in eps):
        raise ScenarioError(["--eps: values must lie in [0, 1/2]"])
    rep = certify_regular_perturbation(geodesic(src, tgt), eps)
    out = cfg.outdir()
    (out / "certify.json").write_text(rep.to_json() + "\n")
    print(f"verdict: {rep.verdict} (max_lip={rep.max_lip:.4g}, L={rep.L_at_r:.4g})")
    return EXIT_OK


def _write_rate(out: Path, name: str, rep) -> None:
    rows = rep.rows()
    io.write_rows(out / f"{name}.csv", list(rows[0]), [list(r.values()) for r in rows])
    io.write_json(out / f"{name}.json", rep.summary())


def cmd_stabilize(cfg: RunConfig, args) -> int:
    sc = cfg.load()
    rep = run_rate_experiment(sc)
    base = run_rate_experiment(sc.with_gain(0.0)) if args.baseline else None
    out = cfg.outdir()
    _write_rate(out, "rate", rep)
    if base is not None:
        _write_rate(out, "rate_baseline", base)
    print(f"p = {rep.p:.4f}, kappa_hat = {rep.kappa_hat:.4f}, R^2 = {rep.r2:.4f}, admissible = {rep.all_admissible}")
    return EXIT_OK


def cmd_enlarge(cfg: RunConfig, args) -> int:
    sc = cfg.load()
    base = None
    kappa = args.kappa
    if kappa is None:
        base = run_rate_experiment(sc)
        kappa = base.kappa_hat
    r = args.r if args.r is not None else sc.r
    rep = run_enlargement_experiment(sc, kappa, r, base=base, scale=args.scale)
    out = cfg.outdir()
    rows = rep.report.rows()
    io.write_rows(out / "enlarge.csv", list(rows[0]), [list(x.values()) for x in rows])
    io.write_json(out / "enlarge.json", rep.summary())
    print(f"alpha = {rep.alpha:.6g}, bound = {rep.bound:.6g}, ok = {rep.ok}")
    return EXIT_OK


def cmd_counterexample(cfg: RunConfig, args) -> int:
    rows = run_counterexample(args.n_max, args.grid, seed=cfg.seed or 0)
    out = cfg.outdir()
    io.write_rows(out / "counterexample.csv", list(rows[0]._fields), [list(r) for r in rows])
    for r in rows:
        print(f"n={r.n} eps={r.eps_n:g} w2={r.w2:.8f} analytic={r.analytic:.8f} rel_gap={r.rel_gap:.2e}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    from .acceptance import run_checks

    numbers = args.only or None
    if args.skip_slow:
        numbers = [k for k in (numbers or range(1, 11)) if k != 8]
    results = run_checks(numbers, echo=print)
    out = cfg.outdir()
    io.write_json(
        out / "verify.json",
        [{"criterion": r.number, "title": r.title, "passed": r.passed, "seconds": r.seconds, **r.detail}
         for r in results],
    )
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {
    "simulate": cmd_simulate,
    "geodesic": cmd_geodesic,
    "prolong": cmd_prolong,
    "certify": cmd_certify,
    "stabilize": cmd_stabilize,
    "enlarge": cmd_enlarge,
    "counterexample": cmd_counterexample,
    "verify": cmd_verify,
}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from exc


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, help="scenario file (key = value lines)")
    common.add_argument("--out", type=Path, default=Path("wstab-out"), help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--n", type=int, default=None, help="override n_particles")
    common.add_argument("--dt", type=float, default=None, help="override dt")
    common.add_argument("--eps-grid", type=_floats, default=None, help="override experiment.eps")
    common.add_argument("--gain", type=float, default=None, help="override control.gain")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wstab", description="Wasserstein stabilization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="reference (or controlled) trajectory")
    p.add_argument("--eps", type=float, default=None, help="start from the geodesic point at eps")
    p.add_argument("--target", type=int, default=0, help="target index for --eps")
    p.add_argument("--every", type=int, default=1, help="export every k-th state")

    for name, helptext in (("geodesic", "optimal plan and interpolation"),
                           ("prolong", "extend a geodesic past its end"),
                           ("certify", "regular-perturbation certificate")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--source", type=Path, required=True)
        p.add_argument("--target", type=Path, required=True)
        if name == "geodesic":
            p.add_argument("--times", type=_floats, default=[0.0, 0.5, 1.0])
        if name == "prolong":
            p.add_argument("--s", type=float, default=0.5)
            p.add_argument("--backward", action="store_true")
        if name == "certify":
            p.add_argument("--eps", dest="eps_list", type=_floats, default=None)

    p = sub.add_parser("stabilize", parents=[common], help="stabilization-rate experiment")
    p.add_argument("--baseline", action="store_true", help="also run the gain-0 baseline")

    p = sub.add_parser("enlarge", parents=[common], help="enlargement experiment")
    p.add_argument("--kappa", type=float, default=None, help="kappa_hat (default: fit it first)")
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--scale", type=float, default=0.99, help="perturbation size as a fraction of alpha(r)")

    p = sub.add_parser("counterexample", parents=[common], help="atomic measures on [0, 1]")
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--grid", type=int, default=4096)

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--only", type=_ints, default=None, help="comma-separated criterion numbers")
    p.add_argument("--skip-slow", action="store_true", help="skip the stabilization-rate run")
    return parser


def dispatch(command: str, cfg: RunConfig, args) -> int:
    try:
        return COMMANDS[command](cfg, args)
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BlowUpError, NonUniquePlan, NotProlongable, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = RunConfig(
        args.scenario,
        args.out,
        args.seed,
        {"n": args.n, "dt": args.dt, "eps": args.eps_grid, "gain": args.gain},
    )
    return dispatch(args.command, cfg, args)


if __name__ == "__main__":
    sys.exit(main())
