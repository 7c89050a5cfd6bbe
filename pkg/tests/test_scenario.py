import json

import numpy as np
import pytest

from conftest import REFERENCE
from hystflow.density import validate_compatibility
from hystflow.errors import ScenarioError, ScenarioParseError
from hystflow.scenario import Scenario, build_problem, load_scenario, loads, stepper_config


def write(tmp_path, doc, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return path


def test_minimal_document_uses_defaults(tmp_path):
    scenario = load_scenario(write(tmp_path, {}))
    assert scenario == Scenario()
    assert scenario.mesh.nodes == (64,)
    assert scenario.density.kind == "decay-family"
    assert scenario.Lambda == 2.0 and scenario.thresholds == 64
    assert scenario.time.tau == 0.01 and scenario.time.T == 1.0
    problem = build_problem(scenario)
    assert problem.mesh.n_nodes == 64
    assert np.all(problem.nu == 0.0)


def test_reference_scenario_loads_and_is_compatible():
    scenario = load_scenario(REFERENCE)
    report = validate_compatibility(build_problem(scenario))
    assert not report.failed
    assert report.warnings == []


def test_round_trip(tmp_path):
    scenario = load_scenario(REFERENCE)
    again = load_scenario(write(tmp_path, scenario.to_json()))
    assert again == scenario
    assert again.to_dict() == scenario.to_dict()


@pytest.mark.parametrize("doc, field", [
    ({"boundary": {"b_star": {"left": -1.0}}}, "boundary.b_star.left"),
    ({"gravity": {"enabled": True, "direction": [0.5]}}, "gravity.direction"),
    ({"initial": {"u0": {"kind": "constant", "value": 3.0}}}, "initial.u0"),
    ({"kappa": {"kappa0": 2.0, "kappa1": 1.0}}, "kappa"),
    ({"time": {"tau": 0.3, "T": 1.0}}, "time.tau"),
    ({"density": {"kind": "decay-family", "m": 2.0}}, "density.m"),
    ({"density": {"kind": "decay-family", "height": 1.0}}, "density.height"),
    ({"mesh": {"dimension": 3}}, "mesh.dimension"),
    ({"initial": {"u0": {"kind": "table", "values": [0.0, 0.1]}}}, "initial.u0.values"),
])
def test_invariant_errors_name_the_field(tmp_path, doc, field):
    with pytest.raises(ScenarioError) as err:
        load_scenario(write(tmp_path, doc))
    assert err.value.field == field


@pytest.mark.parametrize("doc, field", [
    ({"colour": 1}, "colour"),
    ({"mesh": {"node": [3]}}, "mesh.node"),
    ({"initial": {"u0": {"kind": "constant", "vale": 1.0}}}, "initial.u0.vale"),
])
def test_unknown_keys_rejected(tmp_path, doc, field):
    with pytest.raises(ScenarioError) as err:
        load_scenario(write(tmp_path, doc))
    assert err.value.field == field


def test_parse_error_reports_line(tmp_path):
    path = write(tmp_path, '{\n  "Lambda": 2.0,\n  "thresholds": ,\n}\n')
    with pytest.raises(ScenarioParseError) as err:
        load_scenario(path)
    assert err.value.line == 3


def test_wrong_types_rejected():
    with pytest.raises(ScenarioError):
        loads('{"thresholds": 6.5}')
    with pytest.raises(ScenarioError):
        loads('{"gravity": {"enabled": "yes"}}')


def test_unknown_boundary_segment(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, {"boundary": {"b_star": {"top": 1.0}}}))


def test_tabulated_density_from_csv(tmp_path):
    rows = ["r,v,phi"] + [f"{r},{v},0.2" for r in (0.0, 1.0) for v in (-1.0, 1.0)]
    (tmp_path / "phi.csv").write_text("\n".join(rows) + "\n")
    path = write(tmp_path, {"density": {"kind": "tabulated", "csv": "phi.csv"}})
    problem = build_problem(load_scenario(path))
    assert problem.density.kind == "tabulated"


def test_table_fields_and_memory(tmp_path):
    doc = {
        "mesh": {"nodes": [3]},
        "initial": {"u0": {"kind": "table", "values": [0.1, 0.0, -0.1]},
                    "v0": {"kind": "table", "values": [0.0, 0.0, 0.0]}},
        "memory": {"kind": "table", "r": [0.0, 0.1, 2.0],
                   "values": [[0.1, 0.0, 0.0], [0.0, 0.0, 0.0], [-0.1, 0.0, 0.0]]},
    }
    problem = build_problem(load_scenario(write(tmp_path, doc)))
    assert not validate_compatibility(problem).failed


def test_polynomial_transform_and_solver_config(tmp_path):
    doc = {"transform": {"kind": "polynomial", "coefficients": [0.0, 1.0, 0.0, 0.1]},
           "solver": {"newton_tol": 1e-9, "retry_halving": True}}
    scenario = load_scenario(write(tmp_path, doc))
    config = stepper_config(scenario)
    assert config.newton_tol == 1e-9 and config.retry_halving
    assert not build_problem(scenario).transform.is_identity


def test_two_dimensional_default_gravity(tmp_path):
    doc = {"mesh": {"dimension": 2, "extent": [[0, 1], [0, 2]], "nodes": [3, 4]},
           "gravity": {"enabled": True}}
    problem = build_problem(load_scenario(write(tmp_path, doc)))
    np.testing.assert_array_equal(problem.nu, [0.0, -1.0])
