from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wstab.control import (
    Budget,
    ControlField,
    FeedbackPolicy,
    build_cutoff,
    certify_admissible,
    default_delta,
    solve_controlled,
    synthesize_feedback,
)
from wstab.dynamics import NonlocalFieldSpec, solve_reference
from wstab.measures import BoxDomain, DiscreteMeasure, discretize_uniform
from wstab.transport import NonUniquePlan, w2

BIG = BoxDomain((-5.0, -5.0), (5.0, 5.0))
UNIT = BoxDomain((0.0, 0.0), (1.0, 1.0))


def test_cutoff_examples():
    chi = build_cutoff([BoxDomain((0.0,), (1.0,))], delta=0.2)
    assert chi([[0.5], [0.2], [0.1], [0.0], [-1.0], [1.5]]).tolist() == [1.0, 1.0, 0.5, 0.0, 0.0, 0.0]
    assert default_delta([BoxDomain((0, 0), (2, 0.5)), BIG]) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        build_cutoff([])
    with pytest.raises(ValueError):
        build_cutoff([UNIT], delta=0.0)


def test_cutoff_union_takes_deepest_box():
    chi = build_cutoff([BoxDomain((0.0,), (1.0,)), BoxDomain((0.9,), (2.0,))], delta=0.5)
    assert chi([[0.95]])[0] == pytest.approx(0.1)  # 0.05 deep in the first, 0.05 in the second
    assert chi([[1.45]])[0] == 1.0


@given(st.integers(0, 10_000))
def test_cutoff_is_lipschitz(seed):
    rng = np.random.default_rng(seed)
    omega = [BoxDomain((0.0, 0.0), (1.0, 0.5)), BoxDomain((0.7, 0.2), (1.5, 1.5))]
    chi = build_cutoff(omega, delta=0.1)
    x, y = rng.uniform(-0.5, 2.0, size=(2, 200, 2))
    gap = np.abs(chi(x) - chi(y))
    assert np.all(gap <= np.linalg.norm(x - y, axis=1) / 0.1 + 1e-12)
    assert np.all(chi(x)[~chi.inside(x)] == 0.0)


def test_synthesis_examples():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(20, 2))
    cut = build_cutoff([BIG], delta=0.5)
    assert synthesize_feedback(pts, pts, 3.0, cut).is_zero()
    far = build_cutoff([BoxDomain((10, 10), (11, 11))])
    assert synthesize_feedback(pts, pts + 1.0, 3.0, far).is_zero()
    line = np.linspace(-1, 1, 11)[:, None]
    u = synthesize_feedback(line + 0.1, line, 1.0, build_cutoff([BoxDomain((-10.0,), (10.0,))], 0.5))
    assert np.allclose(u.velocities, -0.1, atol=1e-15)
    assert u.lipschitz() <= 1e-12
    with pytest.raises(ValueError):
        synthesize_feedback(pts, pts[:5], 1.0, cut)


def test_synthesis_propagates_non_unique_plans():
    sq = np.array([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(NonUniquePlan):
        synthesize_feedback(sq, [[1.0, 0.0], [0.0, 1.0]], 1.0, build_cutoff([BIG]))


def test_certify_examples():
    pts = np.array([[0.5, 0.5], [3.0, 3.0]])
    cut = build_cutoff([UNIT])
    zero = ControlField(pts, np.zeros_like(pts), np.zeros_like(pts), 1.0, cut, Budget(1.0, 1.0))
    assert certify_admissible(zero) == (True, [])
    bad_vel = np.array([[0.0, 0.0], [0.1, 0.0]])
    bad = ControlField(pts, bad_vel, bad_vel, 1.0, cut, Budget(np.inf, np.inf))
    ok, viol = certify_admissible(bad)
    assert not ok and viol == [{"kind": "support", "atom": 1, "speed": pytest.approx(0.1)}]


def test_certify_lists_sup_and_lipschitz_violations():
    pts = np.array([[0.2, 0.5], [0.3, 0.5], [0.8, 0.5]])
    vel = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]])
    u = ControlField(pts, vel, vel, 1.0, build_cutoff([UNIT], 0.01), Budget(0.5, 1.0))
    ok, viol = certify_admissible(u)
    kinds = sorted(v["kind"] for v in viol)
    assert not ok and kinds.count("sup") == 2 and kinds.count("lipschitz") == 3
    assert {v["pair"] for v in viol if v["kind"] == "lipschitz"} == {(0, 1), (0, 2), (1, 2)}


@pytest.mark.parametrize("seed", range(100))
def test_random_syntheses_are_admissible(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    cur, ref = rng.uniform(-1, 2, size=(n, 2)), rng.uniform(-1, 2, size=(n, 2))
    omega = [BoxDomain((0.0, -1.0), (1.0, 2.0))]
    budget = Budget(float(rng.uniform(0.05, 2.0)), float(rng.uniform(0.05, 2.0)))
    u = synthesize_feedback(cur, ref, float(rng.uniform(0.1, 10)), build_cutoff(omega), budget)
    ok, viol = certify_admissible(u, omega)
    assert ok, viol
    assert u.sup() <= budget.sup_bound and u.lipschitz() <= budget.lip_bound


@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_rescaling_keeps_directions(seed, cap):
    rng = np.random.default_rng(seed)
    cur, ref = rng.normal(size=(15, 2)), rng.normal(size=(15, 2))
    cut = build_cutoff([BoxDomain((-1.0, -1.0), (1.0, 1.0))], 0.3)
    free = synthesize_feedback(cur, ref, 2.0, cut)
    capped = synthesize_feedback(cur, ref, 2.0, cut, Budget(cap, cap))
    assert 0 < capped.scale <= 1.0
    assert np.allclose(capped.velocities, capped.scale * free.velocities, rtol=1e-12, atol=1e-15)


def test_extension_interpolates_atoms_and_vanishes_outside():
    rng = np.random.default_rng(1)
    cur, ref = rng.uniform(0, 1, size=(30, 2)), rng.uniform(0, 1, size=(30, 2))
    omega = [BoxDomain((0.2, 0.2), (0.8, 0.8))]
    u = synthesize_feedback(cur, ref, 1.0, build_cutoff(omega, 0.1))
    assert np.allclose(u(cur), u.velocities, atol=1e-14)
    probe = rng.uniform(-1, 2, size=(500, 2))
    outside = ~build_cutoff(omega).inside(probe)
    assert np.all(u(probe)[outside] == 0.0)


def test_gain_zero_is_bitwise_reference():
    spec = NonlocalFieldSpec(2, {"kind": "rotation", "rate": 1.0}, {"kind": "attraction_repulsion", "a": -0.5})
    rho = discretize_uniform(UNIT, 16)
    ref = solve_reference(spec, rho, 1.0, 0.05)
    out = solve_controlled(spec, FeedbackPolicy(0.0, build_cutoff([BIG])), rho, ref, 1.0, 0.05)
    assert np.array_equal(out.positions, ref.positions)


def test_static_contraction_is_monotone():
    rng = np.random.default_rng(2)
    rho_ref = DiscreteMeasure(rng.uniform(size=(32, 2)))
    rho = DiscreteMeasure(rng.uniform(size=(32, 2)) + 0.2)
    spec = NonlocalFieldSpec(2)
    ref = solve_reference(spec, rho_ref, 1.0, 0.05)
    policy = FeedbackPolicy(3.0, build_cutoff([BIG], 0.5))
    for every in (1, 4):
        out = solve_controlled(spec, policy, rho, ref, 1.0, 0.05, resync_every=every)
        errs = [w2(out.state(k), rho_ref) for k in range(0, out.times.size, every)]
        assert errs[-1] < errs[0]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))
        assert out.meta["admissible"]


def test_slab_error_flat_then_decreasing():
    rho_ref = discretize_uniform(UNIT, 64)
    rho = DiscreteMeasure(rho_ref.points + [0.0, 0.05])
    spec = NonlocalFieldSpec(2, {"kind": "constant", "velocity": [1.0, 0.0]})
    ref = solve_reference(spec, rho_ref, 4.0, 0.02)
    omega = [BoxDomain((2.0, -10.0), (3.0, 10.0))]
    out = solve_controlled(spec, FeedbackPolicy(5.0, build_cutoff(omega)), rho, ref, 4.0, 0.02)
    err = np.array([w2(out.state(k), ref.state(k)) for k in range(out.times.size)])
    before = out.times < 1.0  # nobody reaches x = 2 before t = 1
    assert np.ptp(err[before]) <= 1e-12
    assert err[-1] < 0.1 * err[0]
    assert np.all(np.diff(err) <= 1e-12)
    assert out.meta["admissible"] and len(out.meta["controls"]) == out.times.size - 1


def test_solve_controlled_argument_checks():
    rho = discretize_uniform(UNIT, 4)
    spec = NonlocalFieldSpec(2)
    ref = solve_reference(spec, rho, 1.0, 0.1)
    pol = FeedbackPolicy(1.0, build_cutoff([BIG]))
    with pytest.raises(ValueError):
        solve_controlled(spec, pol, rho, ref, 2.0, 0.1)
    with pytest.raises(ValueError):
        solve_controlled(spec, pol, rho, ref, 1.0, 0.1, resync_every=0)
    with pytest.raises(ValueError):
        FeedbackPolicy(-1.0, build_cutoff([BIG]))
