import csv
import json

import pytest

from cyclicbp.cli import main
from cyclicbp.scenarios import dumps, generate_two_junction, loads, save
from cyclicbp.network import InRoad, Junction, NetworkTopology, Phase, TurningMatrix
from cyclicbp.dynamics import DemandProfile
from cyclicbp.scenarios import Scenario


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "tj.json"
    save(generate_two_junction(horizon_cycles=120), path)
    return path


def test_simulate_writes_artifacts(scenario_file, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", str(scenario_file), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "metrics.csv", "metrics.json", "q_sigma.svg"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"]["controller"]["policy"] == "cyclic_bp"


def test_simulate_is_deterministic_and_reproducible(scenario_file, tmp_path):
    args = ["--mode", "integer", "--seed", "5", "--delta-max", "2"]
    assert main(["simulate", str(scenario_file), "--out", str(tmp_path / "a")] + args) == 0
    assert main(["simulate", str(scenario_file), "--out", str(tmp_path / "b")] + args) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    # the manifest alone reproduces the run
    assert main(["simulate", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "c")]) == 0
    assert a == (tmp_path / "c" / "metrics.csv").read_bytes()


def test_input_not_modified(scenario_file, tmp_path):
    before = scenario_file.read_bytes()
    main(["simulate", str(scenario_file), "--out", str(tmp_path / "o"), "--cycle", "60", "--horizon", "60"])
    assert scenario_file.read_bytes() == before


def test_overrides_resolved_into_manifest(scenario_file, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", str(scenario_file), "--out", str(out), "--policy", "greedy", "--slot", "10",
                 "--cycle", "60", "--horizon", "60", "--k", "4", "--eta", "1.5"]) == 0
    sc = json.loads((out / "manifest.json").read_text())["scenario"]
    assert sc["controller"] == {"policy": "greedy", "eta": 1.5, "k": 4, "decision_interval": 10.0}
    assert sc["topology"]["cycle_length"] == 60.0
    assert sc["run"]["horizon_cycles"] == 60


def test_exit_codes(scenario_file, tmp_path):
    assert main(["simulate", str(tmp_path / "missing.json")]) == 2
    assert main(["simulate", str(scenario_file), "--eta", "-1"]) == 2
    assert main(["simulate", str(scenario_file), "--slot", "20"]) == 2
    bad = json.loads(dumps(generate_two_junction()))
    bad["topology"]["links"].append(["J1_W_T", "nowhere"])
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["simulate", str(path), "--out", str(tmp_path / "x")]) == 3
    (tmp_path / "blocker").write_text("")
    assert main(["simulate", str(scenario_file), "--out", str(tmp_path / "blocker" / "sub")]) == 4


def test_output_dir_from_environment(scenario_file, tmp_path, monkeypatch):
    monkeypatch.setenv("CYCLICBP_OUT", str(tmp_path / "envout"))
    assert main(["simulate", str(scenario_file), "--horizon", "30"]) == 0
    assert (tmp_path / "envout" / "metrics.csv").exists()


def test_sweep(scenario_file, tmp_path):
    args = ["sweep", str(scenario_file), "--intervals", "10,30,60,90", "--horizon", "180"]
    assert main(args + ["--out", str(tmp_path / "s1")]) == 0
    rows = list(csv.reader((tmp_path / "s1" / "sweep.csv").open()))
    assert rows[0][:3] == ["policy", "cycle_s", "interval_s"]
    assert len(rows) == 17
    assert main(args + ["--out", str(tmp_path / "s2")]) == 0
    assert (tmp_path / "s1" / "sweep.csv").read_bytes() == (tmp_path / "s2" / "sweep.csv").read_bytes()
    assert main(["sweep", str(scenario_file), "--policies", "", "--out", str(tmp_path / "s3")]) == 2


def test_sweep_parallel_matches_serial(scenario_file, tmp_path):
    base = ["sweep", str(scenario_file), "--intervals", "30", "--horizon", "60"]
    assert main(base + ["--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_stability_command(scenario_file, tmp_path):
    assert main(["stability", str(scenario_file), "--out", str(tmp_path / "st")]) == 0
    doc = json.loads((tmp_path / "st" / "stability.json").read_text())
    assert len(doc["segments"]) == 2
    assert doc["margin"] > 0


def _single_junction(path, rate):
    topo = NetworkTopology([Junction("J", ["n", "e"], [Phase({"n": 8}), Phase({"e": 8})])],
                           [InRoad("n", "J", None, True), InRoad("e", "J", None, True)], [], 30.0, 0.0)
    sc = Scenario(topo, TurningMatrix({}), DemandProfile.constant({"n": rate, "e": rate}), seed=3,
                  horizon_cycles=600)
    save(sc, path)


def test_compare_stable(tmp_path):
    path = tmp_path / "one.json"
    _single_junction(path, 2.0)
    assert main(["compare", str(path), "--out", str(tmp_path / "c")]) == 0
    rows = list(csv.DictReader((tmp_path / "c" / "ranking.csv").open()))
    assert {r["policy"] for r in rows} == {"cyclic_bp", "classic_bp", "proportional", "greedy"}
    assert all(r["status"] == "stable" for r in rows)
    decisions = {r["policy"]: r["decisions"] for r in rows}
    assert decisions["cyclic_bp"] == decisions["proportional"]
    assert (tmp_path / "c" / "compare.svg").exists()


def test_compare_flags_overload(tmp_path):
    path = tmp_path / "one.json"
    _single_junction(path, 4.4)  # total demand 8.8 against 8 vehicles of green per cycle
    assert main(["compare", str(path), "--out", str(tmp_path / "c")]) == 0
    rows = list(csv.DictReader((tmp_path / "c" / "ranking.csv").open()))
    assert all(r["status"] == "diverging" for r in rows)


def test_generate(tmp_path):
    assert main(["generate", "grid", str(tmp_path / "g.json"), "--rows", "2", "--cols", "3"]) == 0
    assert len(loads((tmp_path / "g.json").read_text()).topology.junctions) == 6
    assert main(["generate", "grid", str(tmp_path / "g.json"), "--rows", "1"]) == 2
