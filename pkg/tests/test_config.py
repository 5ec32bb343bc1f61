import copy
import json
from pathlib import Path

import pytest

from treeshape.config import ConfigError, parse_config, parse_config_data

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def branches():
    return {"mode": "optimize-branches",
            "problem": {"domain": {"lower": [-1, 0], "upper": [1, 2]}, "resolution": [16, 16],
                        "light": {"hemisphere": 4}, "c": 0.5, "alpha": 0.6,
                        "smear_radius": 0.3},
            "solver": {}}


def issues_of(data, mode=None):
    with pytest.raises(ConfigError) as exc:
        parse_config_data(data, mode)
    return {i.path: i.reason for i in exc.value.issues}


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_scenarios_parse_and_round_trip(path):
    cfg = parse_config(path)
    assert parse_config_data(cfg.to_json()) == cfg
    assert json.loads(cfg.dumps()) == cfg.to_json()


def test_defaults_are_filled():
    cfg = parse_config_data(branches())
    assert cfg.seed == 0 and cfg.output_dir == "out"
    assert cfg.problem["kappa0"] == 1.0
    assert cfg.problem["light"]["scale"] == 1.0
    assert cfg.solver["budget"] == 2000
    assert cfg.solver["proposals"] == ["move", "split", "merge", "transfer"]


def test_input_is_not_mutated():
    data = branches()
    before = copy.deepcopy(data)
    parse_config_data(data)
    assert data == before


def test_unknown_keys_are_reported_with_paths():
    data = branches()
    data["colour"] = "green"
    data["problem"]["light"]["intensity"] = 2
    data["solver"]["budgett"] = 10
    got = issues_of(data)
    assert "unknown key" in got["colour"]
    assert "unknown key" in got["problem.light.intensity"]
    assert "unknown key" in got["solver.budgett"]


def test_missing_required_key():
    data = branches()
    del data["problem"]["smear_radius"]
    assert "missing required key" in issues_of(data)["problem.smear_radius"]


def test_all_errors_reported_together():
    data = branches()
    data["seed"] = -1
    data["problem"]["resolution"] = [16, "x"]
    data["solver"]["budget"] = 0
    got = issues_of(data)
    assert {"seed", "problem.resolution[1]", "solver.budget"} <= set(got)


def test_type_errors():
    data = branches()
    data["problem"]["c"] = "large"
    assert "problem.c" in issues_of(data)


@pytest.mark.parametrize("alpha", [0.0, 1.5, -0.2])
def test_alpha_range(alpha):
    data = branches()
    data["problem"]["alpha"] = alpha
    assert "exponent condition" in issues_of(data)["problem.alpha"]


def test_dimension_condition_for_branches_in_3d():
    data = branches()
    data["problem"].update(domain={"lower": [-1, -1, 0], "upper": [1, 1, 2]},
                           resolution=[8, 8, 8], alpha=0.4, smear_radius=0.6)
    assert "1 - 1/(d-1)" in issues_of(data)["problem.alpha"]
    data["problem"]["alpha"] = 0.6
    parse_config_data(data)


def test_origin_must_be_in_domain():
    data = branches()
    data["problem"]["domain"] = {"lower": [0.5, 0], "upper": [1, 2]}
    assert "origin" in issues_of(data)["problem.domain"]


def test_smear_radius_two_cells():
    data = branches()
    data["problem"]["smear_radius"] = 0.1
    assert "two cell widths" in issues_of(data)["problem.smear_radius"]


def test_branch_problem_needs_positive_c():
    data = branches()
    data["problem"]["c"] = 0.0
    assert "positive" in issues_of(data)["problem.c"]


def test_light_spec_alternatives():
    data = branches()
    data["problem"]["light"] = {"directions": [[0, 1], [1, 1]], "weights": [1.0]}
    assert "one weight per direction" in issues_of(data)["problem.light.weights"]
    data["problem"]["light"] = {"hemisphere": 4, "weights": [1.0]}
    assert "problem.light" in issues_of(data)
    data["problem"]["light"] = {"directions": [[0, 0]], "weights": [1.0]}
    assert "zero vector" in issues_of(data)["problem.light.directions[0]"]


def test_initial_measure_checks():
    data = branches()
    data["solver"]["initial"] = {"atoms": [{"x": [0, 0.5], "m": 0.5}]}
    assert "kappa0" in issues_of(data)["solver.initial"]


def test_mode_mismatch_and_missing_mode():
    assert "mode" in issues_of(branches(), "harvest")
    data = branches()
    del data["mode"]
    assert parse_config_data(data, "optimize-branches").mode == "optimize-branches"
    assert "mode" in issues_of(data)


def test_not_an_object():
    assert "" in issues_of([1, 2])


def test_harvest_reaction_checks():
    data = {"mode": "harvest",
            "problem": {"domain": {"lower": [0, 0], "upper": [1, 1]}, "resolution": [4, 4],
                        "reaction": {"a": 2.0, "b": 1.0, "M": 1.0}}}
    assert "a <= b*M" in issues_of(data)["problem.reaction.a"]
    data["problem"]["reaction"]["a"] = [[0.5] * 4] * 4
    assert "5x5" in issues_of(data)["problem.reaction.a"]
    data["problem"]["reaction"]["a"] = [[0.5] * 5] * 5
    cfg = parse_config_data(data)
    assert cfg.problem["bc"] == "neumann"
    assert cfg.problem["dirichlet_sides"] == ["left", "right", "bottom", "top"]


def test_harvest_is_two_dimensional():
    data = {"mode": "harvest",
            "problem": {"domain": {"lower": [0, 0, 0], "upper": [1, 1, 1]},
                        "resolution": [4, 4, 4], "reaction": {"a": 0.5, "b": 1.0, "M": 1.0}}}
    assert "not supported" in issues_of(data)["problem.domain"]


def test_density_sources():
    data = {"mode": "sunlight",
            "problem": {"domain": {"lower": [0, 0], "upper": [1, 1]}, "resolution": [8, 8],
                        "density": {"constant": 1.0, "csv": "f.csv"}, "light": {"hemisphere": 3}}}
    assert "exactly one" in issues_of(data)["problem.density"]
    data["problem"]["density"] = {"measure": {"atoms": [{"x": [0.5, 0.5], "m": 1}]}}
    assert "missing required key" in issues_of(data)["problem.density.smear_radius"]


def test_irrigate_atom_cap():
    atoms = [{"x": [k, 1], "m": 1} for k in range(9)]
    data = {"mode": "irrigate", "problem": {"measure": {"atoms": atoms}, "alpha": 0.5}}
    assert "at most" in issues_of(data)["solver.mode"]
    data["solver"] = {"mode": "heuristic"}
    assert parse_config_data(data).solver["mode"] == "heuristic"


def test_parse_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)
