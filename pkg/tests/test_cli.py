import json
import math
from pathlib import Path

import pytest

from treeshape.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from treeshape.measure import BoxDomain, GridDensity

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def write_config(tmp_path, name, data):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(data))
    return p


def shipped(name, **solver):
    data = json.loads((SCENARIOS / f"{name}.json").read_text())
    data.setdefault("solver", {}).update(solver)
    return data


def run(tmp_path, name, data, out, *extra):
    cfg = write_config(tmp_path, name, data)
    return main([data["mode"], "--config", str(cfg), "--out", str(out), *extra])


def test_sunlight_scenario(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["sunlight", "--config", str(SCENARIOS / "sunlight_unit_square.json"),
                 "--out", str(out)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["S"] == pytest.approx(1 - math.exp(-1), abs=1e-3)
    names = {p.name for p in out.iterdir()}
    assert names == {"density.csv", "density.json", "density.svg", "result.json", "config.json",
                     "manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == names
    assert manifest["exit_code"] == 0 and manifest["results"]["S"] == summary["S"]
    assert {"numpy", "scipy", "python", "treeshape"} <= set(manifest["versions"])


def test_irrigate_scenario(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["irrigate", "--config", str(SCENARIOS / "irrigate_fixture.json"),
                 "--out", str(out)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["cost"] == pytest.approx(1.5, abs=1e-4)
    result = json.loads((out / "result.json").read_text())
    assert result["certified_optimal"] and result["cost"] >= result["lower_bound"]
    assert (out / "tree.svg").read_text().count("<line") == 3


def test_harvest_scenario_and_csv_roots(tmp_path, capsys):
    f = GridDensity.constant(BoxDomain((0.0, 0.0), (1.0, 1.0)), (8, 8), 1.0)
    (tmp_path / "roots.csv").write_text(f.to_csv())
    data = {"mode": "harvest",
            "problem": {"domain": {"lower": [0, 0], "upper": [1, 1]}, "resolution": [8, 8],
                        "reaction": {"a": 1.0, "b": 1.0, "M": 1.0}, "roots": {"csv": "roots.csv"}},
            "solver": {"tol": 1e-10}}
    assert run(tmp_path, "harvest", data, tmp_path / "out") == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["H"] == pytest.approx(0.5, abs=1e-9)
    assert summary["H_flux_form"] == pytest.approx(0.5, abs=1e-9)
    rows = (tmp_path / "out" / "u.csv").read_text().strip().split("\n")
    assert len(rows) == 9


def test_harvest_non_convergence_exit_code(tmp_path, capsys):
    data = shipped("harvest_roots")
    data["solver"] = {"tol": 1e-14, "max_iter": 1, "shift": "constant"}
    out = tmp_path / "out"
    assert run(tmp_path, "harvest", data, out) == EXIT_SOLVER
    assert "did not converge" in capsys.readouterr().err
    assert not out.exists()


def test_invalid_config_exit_code(tmp_path, capsys):
    data = shipped("optimize_branches")
    data["problem"]["c"] = "big"
    data["problem"]["extra"] = 1
    assert run(tmp_path, "bad", data, tmp_path / "out") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "problem.c" in err and "problem.extra" in err
    assert not (tmp_path / "out").exists()
    # range checks run once the document is well formed
    data = shipped("optimize_branches")
    data["problem"]["alpha"] = 1.5
    assert run(tmp_path, "bad", data, tmp_path / "out") == EXIT_CONFIG
    assert "problem.alpha" in capsys.readouterr().err


def test_missing_csv_is_a_config_error(tmp_path, capsys):
    data = {"mode": "harvest",
            "problem": {"domain": {"lower": [0, 0], "upper": [1, 1]}, "resolution": [8, 8],
                        "reaction": {"a": 1.0, "b": 1.0, "M": 1.0}, "roots": {"csv": "nope.csv"}}}
    assert run(tmp_path, "harvest", data, tmp_path / "out") == EXIT_CONFIG


def test_unreadable_config(tmp_path):
    assert main(["sunlight", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


@pytest.mark.parametrize("name", ["optimize_branches", "optimize_roots"])
def test_optimizer_scenarios_are_byte_identical(tmp_path, capsys, name):
    data = shipped(name, budget=25)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert run(tmp_path, name, data, out) == EXIT_OK
    files = sorted(p.name for p in outs[0].iterdir())
    assert {"best_measure.json", "trace.csv", "overlay.svg", "result.json"} <= set(files)
    for f in files:
        if f != "manifest.json":   # holds the wall time
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    result = json.loads((outs[0] / "result.json").read_text())
    assert result["report"]["counts"]["evaluations"] == 25
    assert result["report"]["best"]["objective"] <= result["objective_bound"]
    trace = (outs[0] / "trace.csv").read_text().strip().split("\n")
    assert trace[0] == "evaluation,best_objective" and len(trace) == 26


def test_seed_override(tmp_path, capsys):
    data = shipped("optimize_branches", budget=15)
    run(tmp_path, "s", data, tmp_path / "a", "--seed", "1")
    run(tmp_path, "s", data, tmp_path / "b", "--seed", "2")
    cfg = [json.loads((tmp_path / d / "config.json").read_text()) for d in "ab"]
    assert [c["seed"] for c in cfg] == [1, 2]


def test_roots_summary_reports_certificates(tmp_path, capsys):
    assert run(tmp_path, "r", shipped("optimize_roots", budget=10), tmp_path / "out") == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert [c["name"] for c in summary["certificates"]] == ["necessary_condition", "support_domain"]
    assert (tmp_path / "out" / "u.csv").exists()


def test_selftest_quick(tmp_path, capsys):
    assert main(["selftest", "--quick", "--out", str(tmp_path / "st")]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["failed"] == 0 and summary["passed"] == len(summary["checks"])


def test_usage_errors():
    with pytest.raises(SystemExit):
        main([])
    with pytest.raises(SystemExit):
        main(["sunlight"])          # --config is required
