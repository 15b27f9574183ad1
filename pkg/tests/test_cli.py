from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from wstab import acceptance, io
from wstab.cli import format_scenario, main, parse_scenario, reachable_warnings
from wstab.experiments import ScenarioError
from wstab.measures import DiscreteMeasure

SMALL = """\
# unit drift through a slab
dim = 2
n_particles = 16
T = 4.0
dt = 0.05
field.drift.kind = constant
field.drift.velocity = [1.0, 0.0]
rho0.box = [[0, 0], [1, 1]]
Omega.box = [[-0.5, -0.5], [1.5, 1.5]]
omega.box.1 = [[2, -10], [3, 10]]
control.lip_bound = 0.5
experiment.r = 0.2
experiment.eps = [0.2, 0.1, 0.05]
experiment.targets = 2
"""


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "small.scn"
    path.write_text(SMALL)
    return path


def test_parse_defaults():
    sc = parse_scenario(SMALL)
    assert sc.rho0.n == 16 and sc.rho0.mode == "grid" and sc.seed == 0
    assert sc.control.gain == 5.0 and sc.control.resync_every == 1
    assert sc.control.sup_bound == np.inf and sc.control.lip_bound == 0.5
    assert sc.eps_grid == (0.2, 0.1, 0.05)
    assert sc.field.kernel == {"kind": "zero"}
    assert sc.delta == pytest.approx(0.1)


def test_format_round_trip():
    sc = parse_scenario(SMALL)
    assert parse_scenario(format_scenario(sc)) == sc
    sc2 = replace(sc, control=replace(sc.control, delta=0.05, sup_bound=2.0))
    assert parse_scenario(format_scenario(sc2)) == sc2


def test_parse_reports_every_error():
    text = SMALL.replace("experiment.eps = [0.2, 0.1, 0.05]", "experiment.eps = [0.6, 0.1, 0.05]")
    text = text.replace("dt = 0.05", "dt = -1") + "bogus.key = 3\n"
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    errs = info.value.errors
    assert any(e.startswith("experiment.eps") for e in errs)
    assert any(e.startswith("dt") for e in errs)
    assert any("bogus.key" in e for e in errs)


def test_missing_required_keys():
    with pytest.raises(ScenarioError) as info:
        parse_scenario("dim = 2\n")
    joined = " ".join(info.value.errors)
    for key in ("T", "rho0.box", "Omega.box"):
        assert key in joined


def test_unreachable_omega_warns():
    warnings = []
    sc = parse_scenario(SMALL.replace("[[2, -10], [3, 10]]", "[[2, 5], [3, 10]]"), warnings)
    assert warnings and reachable_warnings(sc) == warnings


def test_exit_code_on_bad_scenario_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(SMALL.replace("[0.2, 0.1, 0.05]", "[0.6]"))
    out = tmp_path / "out"
    assert main(["stabilize", "--scenario", str(bad), "--out", str(out)]) == 1
    assert "experiment.eps" in capsys.readouterr().err
    assert not out.exists()


def test_usage_errors_exit_one(tmp_path):
    assert main(["simulate"]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["simulate", "--scenario", str(tmp_path / "missing.scn"), "--out", str(tmp_path / "o")]) == 1


def test_simulate_is_deterministic(scenario, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["simulate", "--scenario", str(scenario), "--out", str(out), "--every", "10"]) == 0
    files = sorted(p.name for p in (outs[0] / "trajectory").iterdir())
    assert "index.csv" in files
    for name in files:
        assert (outs[0] / "trajectory" / name).read_bytes() == (outs[1] / "trajectory" / name).read_bytes()
    summary = json.loads((outs[0] / "simulate.json").read_text())
    assert summary["A2"] is True


def test_simulate_controlled_start(scenario, tmp_path):
    out = tmp_path / "c"
    assert main(["simulate", "--scenario", str(scenario), "--out", str(out), "--eps", "0.1", "--every", "20"]) == 0
    assert json.loads((out / "simulate.json").read_text())["admissible"] is True
    assert (out / "control_last.csv").exists()


def test_geodesic_prolong_certify(tmp_path):
    rng = np.random.default_rng(0)
    src = io.write_measure(tmp_path / "src.csv", DiscreteMeasure(rng.uniform(size=(12, 2))))
    tgt = io.write_measure(tmp_path / "tgt.csv", DiscreteMeasure(rng.uniform(size=(12, 2)) + 1))
    common = ["--source", str(src), "--target", str(tgt), "--out", str(tmp_path / "o")]
    assert main(["geodesic", *common, "--times", "0,0.5,1"]) == 0
    mid, t = io.read_measure(tmp_path / "o" / "geodesic_t0.5.csv")
    assert t == 0.5 and mid.n == 12
    assert main(["prolong", *common, "--s", "0.5"]) == 0
    assert main(["certify", *common]) == 0
    assert json.loads((tmp_path / "o" / "certify.json").read_text())["verdict"] is True
    assert main(["certify", *common, "--eps", "0.7"]) == 1


def test_prolong_failure_is_numeric_exit(tmp_path):
    src = io.write_measure(tmp_path / "src.csv", DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]]))
    tgt = io.write_measure(tmp_path / "tgt.csv", DiscreteMeasure([[3.0, 3.0], [3.0, 3.0]]))
    args = ["prolong", "--source", str(src), "--target", str(tgt), "--out", str(tmp_path / "o")]
    assert main(args) == 2


def test_stabilize_writes_reports(scenario, tmp_path):
    out = tmp_path / "s"
    assert main(["stabilize", "--scenario", str(scenario), "--out", str(out), "--baseline"]) == 0
    data = json.loads((out / "rate.json").read_text())
    assert data["all_admissible"] is True and data["p"] > 1.0
    assert json.loads((out / "rate_baseline.json").read_text())["p"] == pytest.approx(1.0, abs=0.1)


def test_enlarge(scenario, tmp_path):
    out = tmp_path / "e"
    assert main(["enlarge", "--scenario", str(scenario), "--out", str(out), "--kappa", "0.5"]) == 0
    assert json.loads((out / "enlarge.json").read_text())["alpha"] > 0


def test_counterexample_table(tmp_path, capsys):
    assert main(["counterexample", "--n-max", "4", "--grid", "256", "--out", str(tmp_path)]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 4
    assert len((tmp_path / "counterexample.csv").read_text().strip().splitlines()) == 5
    assert main(["counterexample", "--n-max", "4", "--grid", "100", "--out", str(tmp_path)]) == 1


def test_verify_only(tmp_path, capsys):
    assert main(["verify", "--only", "3,7", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [line.split()[0] for line in lines] == ["[PASS]", "[PASS]"]


def test_verify_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setitem(acceptance.CHECKS, 3, ("always fails", lambda: {"passed": False}))
    assert main(["verify", "--only", "3", "--out", str(tmp_path)]) == 3
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report[0]["passed"] is False
