from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wstab.convexity import (
    MonotoneSampleMap,
    NotProlongable,
    certify_regular_perturbation,
    cyclic_monotonicity_constant,
    hull_coverage,
    map_continuity_probe,
    monotonicity_constant,
    prolong_geodesic,
    prolongation_factor,
    resolvent_apply,
    yosida_apply,
)
from wstab.measures import BoxDomain, DiscreteMeasure, discretize_uniform
from wstab.transport import Geodesic, TransportPlan, check_monotone_optimal, geodesic

from conftest import clouds
from oracles import brute_cyclic_constant


def _identity_plan_geodesic(x, y):
    n = len(x)
    return Geodesic(TransportPlan(DiscreteMeasure(x), DiscreteMeasure(y), np.arange(n)), verify=False)


@pytest.fixture
def cloud():
    return np.random.default_rng(0).normal(size=(25, 2))


def test_monotonicity_constant_examples(cloud):
    assert monotonicity_constant(MonotoneSampleMap(cloud, cloud)) == pytest.approx(2.0, rel=1e-12)
    assert monotonicity_constant(MonotoneSampleMap(cloud, 2 * cloud)) == pytest.approx(4.0, rel=1e-12)
    const = np.tile([1.0, -3.0], (25, 1))
    assert monotonicity_constant(MonotoneSampleMap(cloud, const)) == 0.0
    with pytest.raises(ValueError):
        monotonicity_constant(MonotoneSampleMap(np.ones((3, 2)), np.zeros((3, 2))))


def test_sample_map_validation():
    with pytest.raises(ValueError):
        MonotoneSampleMap(np.zeros((3, 2)), np.zeros((2, 2)))
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    x = np.random.default_rng(1).normal(size=(10, 2))
    assert MonotoneSampleMap(x, x @ rot.T).is_monotone()  # skew maps are monotone, ell = 0
    assert not MonotoneSampleMap(x, -x).is_monotone()


@pytest.mark.parametrize("seed", range(15))
def test_cyclic_constant_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7))
    x = rng.normal(size=(n, 2))
    A = rng.normal(size=(2, 2))
    g = x @ (A @ A.T + 0.3 * np.eye(2)).T + 0.2 * rng.normal(size=(n, 2))
    m = MonotoneSampleMap(x, g)
    c = cyclic_monotonicity_constant(m)
    assert c == pytest.approx(brute_cyclic_constant(x, g), rel=1e-9, abs=1e-12)
    assert c <= monotonicity_constant(m) + 1e-12


def test_resolvent_examples(cloud):
    for lam in (0.01, 0.5, 2.0):
        res = resolvent_apply(MonotoneSampleMap(cloud, cloud), lam)
        assert np.allclose(res.inputs, (1 + lam) * cloud, rtol=1e-15, atol=1e-15)
        assert np.allclose(res.outputs, res.inputs / (1 + lam), rtol=1e-14, atol=1e-15)
    tiny = resolvent_apply(MonotoneSampleMap(cloud, cloud), 1e-12)
    assert np.allclose(tiny.inputs, cloud, atol=1e-11)
    assert np.array_equal(tiny.outputs, cloud)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            resolvent_apply(MonotoneSampleMap(cloud, cloud), bad)
        with pytest.raises(ValueError):
            yosida_apply(MonotoneSampleMap(cloud, cloud), bad)


def test_yosida_examples(cloud):
    y = yosida_apply(MonotoneSampleMap(cloud, 2 * cloud), 1.0)
    assert np.allclose(y.inputs, 3 * cloud, atol=1e-15)
    assert np.allclose(y.outputs, 2 * cloud, atol=1e-14)


@given(clouds(n_min=2, n_max=15, d_min=1, d_max=3), st.floats(0.01, 5.0))
def test_yosida_reproduces_outputs(pair, lam):
    x, r = pair
    g = x + 0.1 * r  # arbitrary data; the identity is algebraic
    y = yosida_apply(MonotoneSampleMap(x, g), lam)
    assert np.allclose(y.outputs, g, rtol=1e-9, atol=1e-9 * (1 + np.abs(g).max()))


@given(clouds(n_min=2, n_max=15, d_min=1, d_max=3), st.floats(0.01, 5.0))
def test_resolvent_nonexpansive_for_monotone_data(pair, lam):
    x, _ = pair
    rng = np.random.default_rng(int(abs(x[0, 0]) * 1e6) % 2**32)
    B = rng.normal(size=(x.shape[1],) * 2)
    g = x @ (B @ B.T).T
    res = resolvent_apply(MonotoneSampleMap(x, g), lam)
    din = np.linalg.norm(res.inputs[:, None] - res.inputs[None], axis=2)
    dout = np.linalg.norm(res.outputs[:, None] - res.outputs[None], axis=2)
    assert np.all(dout <= din + 1e-12 * (1 + din))
    disp = np.linalg.norm(res.inputs - res.outputs, axis=1)
    assert np.all(disp <= lam * np.linalg.norm(g, axis=1).max() * (1 + 1e-12))


def test_prolongation_factor():
    assert prolongation_factor(2.0) == 1.0 and prolongation_factor(5.0) == 1.0
    assert prolongation_factor(1.0) == 0.5
    assert prolongation_factor(2.0 - 1e-15) == 1.0  # continuous at 2, no blow-up
    with pytest.raises(NotProlongable):
        prolongation_factor(0.0)


def test_prolong_translation(cloud):
    v = np.array([0.4, -0.1])
    pr = prolong_geodesic(geodesic(cloud, cloud + v), 0.5)
    assert pr.ell == pytest.approx(2.0) and pr.factor == 1.0
    start = cloud + 0.5 * v
    assert np.allclose(pr.geodesic.end.points, start + 2 * (0.5 * v), atol=1e-14)
    # the original remainder [s, 1] is the first half of the extension
    assert pr.extended_parameter(1.0) == pytest.approx(0.5)
    assert np.allclose(pr.geodesic.positions(0.5), cloud + v, atol=1e-14)


def test_prolong_dilation(cloud):
    # from x to 3x the map g(1/4) -> g(1) is the dilation by 2
    pr = prolong_geodesic(_identity_plan_geodesic(cloud, 3 * cloud), 0.25)
    p = 1.5 * cloud
    assert pr.ell == pytest.approx(4.0, rel=1e-9) and pr.factor == 1.0
    assert np.allclose(pr.geodesic.end.points, 3 * p, atol=1e-13)
    assert check_monotone_optimal(pr.geodesic.plan)


def test_backward_prolongation_of_contraction_to_point():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(32, 2))
    g = _identity_plan_geodesic(x, np.tile([0.3, 0.2], (32, 1)))
    for s in (0.2, 0.5, 0.8):
        pr = prolong_geodesic(g, s, backward=True)
        assert np.abs(pr.geodesic.positions(pr.extended_parameter(1.0)) - x).max() <= 1e-9


def test_prolong_overlap_and_certificate():
    rng = np.random.default_rng(8)
    for _ in range(10):
        g = geodesic(rng.uniform(size=(32, 2)), rng.uniform(size=(32, 2)) + 0.5)
        s = float(rng.uniform(0.2, 0.8))
        pr = prolong_geodesic(g, s)
        assert check_monotone_optimal(pr.geodesic.plan)
        for u in np.linspace(s, 1, 5):
            assert np.abs(pr.geodesic.positions(pr.extended_parameter(u)) - g.positions(u)).max() <= 1e-9
            assert pr.original_parameter(pr.extended_parameter(u)) == pytest.approx(u)


def test_prolong_rejections(cloud):
    y = cloud.copy()
    y[1] = y[0]
    with pytest.raises(NotProlongable):
        prolong_geodesic(geodesic(cloud, y), 0.5)
    with pytest.raises(ValueError):
        prolong_geodesic(geodesic(cloud, cloud + 1), 1.0)


def test_regular_perturbation_examples(cloud):
    g = geodesic(cloud, cloud + [0.3, 0.4])
    rep = certify_regular_perturbation(g, [0.0])
    assert rep.verdict and rep.max_lip == pytest.approx(1.0) and rep.max_identity_gap_over_eps == 0.0
    rep = certify_regular_perturbation(g, [0.5])
    assert rep.verdict
    assert rep.max_identity_gap_over_eps == pytest.approx(0.5, rel=1e-12)  # |v| = 0.5
    assert rep.verdict == (
        rep.max_lip <= rep.L_at_r
        and rep.max_identity_gap_over_eps <= rep.L_at_r
        and rep.monotone_ok
        and rep.pushforward_ok
    )
    json.loads(rep.to_json())
    with pytest.raises(ValueError):
        certify_regular_perturbation(g, [0.6])


def test_regular_perturbation_random_targets():
    box = BoxDomain((0.0, 0.0), (1.0, 1.0))
    rng = np.random.default_rng(3)
    for k in range(5):
        rho0 = discretize_uniform(box, 128, seed=k, mode="random")
        g = geodesic(rho0, rng.uniform(-1, 2, size=(128, 2)))
        rep = certify_regular_perturbation(g, [0.1, 0.25, 0.5])
        assert rep.verdict and rep.max_lip <= 2.0 * (1 + 1e-9)


def test_hull_coverage_detects_holes():
    box = BoxDomain((0.0, 0.0), (1.0, 1.0))
    full = discretize_uniform(box, 1024).points
    ring = full[np.linalg.norm(full - 0.5, axis=1) > 0.35]
    assert hull_coverage(full) > 0.95
    assert hull_coverage(ring) < 0.8


def test_continuity_probe_examples(cloud):
    mu = DiscreteMeasure(cloud + 1.0)
    rho = DiscreteMeasure(np.random.default_rng(2).normal(size=(25, 2)))
    assert np.all(map_continuity_probe(rho, [mu] * 4, mu) == 0.0)
    v = np.array([0.6, -0.8])
    gaps = map_continuity_probe(rho, [mu.translate(v / k) for k in range(1, 6)], mu)
    assert np.allclose(gaps, [1.0 / k for k in range(1, 6)], rtol=1e-12)
