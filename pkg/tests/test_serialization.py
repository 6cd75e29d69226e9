import json

import numpy as np
import pytest

from psbf.dbn import x, xt
from psbf.errors import ModelError
from psbf.fixtures import robot_arm, robot_arm_clusterings
from psbf.serialization import (ProcessValidationError, dumps_process, dumps_trajectory, load_process,
                                load_trajectory, process_from_json, process_to_json, save_trajectory,
                                validation_findings)
from psbf.synthgen import GenSpec, generate_process, simulate_trajectory


def _doc():
    return {
        "variables": [{"id": 1, "kind": "state", "domain_size": 2}, {"id": 2, "kind": "state", "domain_size": 2},
                      {"id": 1, "kind": "obs", "domain_size": 2}],
        "actions": [{
            "action_id": "go",
            "edges": [[["x1", "t"], ["x1", "t1"]], [["x1", "t1"], ["x2", "t1"]], [["x2", "t1"], ["y1", "t1"]]],
            "cpts": {"x1": [[0.9, 0.1], [0.1, 0.9]], "x2": [[1, 0], [0, 1]], "y1": [[0.8, 0.2], [0.2, 0.8]]},
        }],
    }


class TestProcessFiles:
    def test_parse_minimal_document(self):
        process, clusterings = process_from_json(_doc())
        dbn = process.actions["go"]
        assert dbn.parents(x(0)) == (xt(0),)
        assert dbn.cpt(x(1)).shape == (2, 2)
        assert clusterings == {}

    def test_round_trip_preserves_everything(self, tmp_path):
        arm = robot_arm()
        path = tmp_path / "arm.json"
        path.write_text(dumps_process(arm, robot_arm_clusterings()))
        back, named = load_process(path)
        assert named == robot_arm_clusterings()
        assert back.meta == arm.meta
        for a, dbn in arm.actions.items():
            assert back.actions[a].edges == dbn.edges
            for node, table in dbn.cpts.items():
                np.testing.assert_array_equal(back.actions[a].cpt(node), table)
        assert dumps_process(back, named) == path.read_text()

    def test_generated_process_round_trip_is_byte_identical(self):
        proc = generate_process(GenSpec.of_size("S", 0.5, 3))
        text = dumps_process(proc)
        again, _ = process_from_json(json.loads(text))
        assert dumps_process(again) == text

    def test_small_rounding_is_renormalized(self):
        doc = _doc()
        doc["actions"][0]["cpts"]["x1"] = [[0.9, 0.1 + 1e-11], [0.1, 0.9]]
        process, _ = process_from_json(doc)
        assert process.actions["go"].cpt(x(0))[0].sum() == pytest.approx(1.0, abs=1e-15)

    def test_invalid_rows_reported(self):
        doc = _doc()
        doc["actions"][0]["cpts"]["x1"] = [[0.5, 0.6], [0.1, 0.9]]
        with pytest.raises(ProcessValidationError) as exc:
            process_from_json(doc)
        assert [f.kind for f in exc.value.findings["go"]] == ["unnormalized-row"]

    def test_cycle_reported(self):
        doc = _doc()
        doc["actions"][0]["edges"].append([["x2", "t1"], ["x1", "t1"]])
        kinds = [f.kind for f in validation_findings(doc)["go"]]
        assert "cycle" in kinds

    def test_malformed_documents(self):
        with pytest.raises(ModelError):
            process_from_json({"variables": []})
        doc = _doc()
        doc["actions"][0]["edges"].append([["z1", "t"], ["x1", "t1"]])
        with pytest.raises(ModelError):
            process_from_json(doc)
        doc = _doc()
        doc["variables"][1]["id"] = 3
        with pytest.raises(ModelError):
            process_from_json(doc)

    def test_edge_endpoints_encode_slices(self):
        doc = process_to_json(robot_arm())
        edges = doc["actions"][0]["edges"]
        assert [["x1", "t"], ["x1", "t1"]] in edges
        assert all(e[1][1] == "t1" for e in edges)


class TestTrajectoryFiles:
    def test_round_trip(self, tmp_path):
        proc = generate_process(GenSpec.of_size("S", 0.5, 1))
        traj = simulate_trajectory(proc, 12, np.random.default_rng(0))
        path = tmp_path / "t.csv"
        save_trajectory(path, traj, proc.n, proc.m)
        back = load_trajectory(path)
        assert back.actions == traj.actions
        np.testing.assert_array_equal(back.states, traj.states)
        np.testing.assert_array_equal(back.observations, traj.observations)

    def test_header_and_initial_row(self):
        proc = generate_process(GenSpec.of_size("S", 0.5, 1))
        traj = simulate_trajectory(proc, 2, np.random.default_rng(0))
        lines = dumps_trajectory(traj, proc.n, proc.m).splitlines()
        assert lines[0].startswith("step,action,x1,") and lines[0].endswith("y3")
        assert lines[1].startswith("0,,") and lines[1].endswith(",,,")
        assert len(lines) == 4
