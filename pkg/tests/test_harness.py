"""Scenario runner: spec validation, helpers, and one small live run."""

import socket

import pytest

from spacefarm.harness import (
    Fault,
    Scenario,
    check_exactly_once,
    free_port,
    run_scenario,
)


def scenario_dict(**overrides):
    obj = {
        "name": "smoke",
        "topology": {"workers": 2},
        "case": {"case_id": "c1"},
        "assertions": ["case_completes"],
    }
    obj.update(overrides)
    return obj


def test_scenario_from_dict_defaults():
    scenario = Scenario.from_dict(scenario_dict())
    assert scenario.workers == 2
    assert scenario.start_offsets == [0.0, 0.0]
    assert scenario.faults == []
    assert scenario.timeout_s == 120.0


def test_scenario_parses_faults_and_offsets():
    obj = scenario_dict(
        topology={"workers": 3, "start_offsets": [0, 0, 2.5]},
        faults=[
            {"target": 1, "trigger": "after-claim", "action": "kill"},
            {"target": 2, "trigger": "after-file-read", "action": "pause", "pause_ms": 50},
        ],
    )
    scenario = Scenario.from_dict(obj)
    assert scenario.start_offsets == [0.0, 0.0, 2.5]
    assert scenario.faults[0] == Fault(target=1, trigger="after-claim", action="kill")
    assert scenario.faults[1].pause_ms == 50


@pytest.mark.parametrize(
    "mutation",
    [
        {"topology": {"workers": 0}},
        {"topology": {"workers": 2, "start_offsets": [0.0]}},
        {"faults": [{"target": 0, "trigger": "no-phase", "action": "kill"}]},
        {"faults": [{"target": 0, "trigger": "after-claim", "action": "explode"}]},
        {"faults": [{"target": 5, "trigger": "after-claim", "action": "kill"}]},
        {"assertions": ["not_an_assertion"]},
    ],
)
def test_scenario_rejects_bad_specs(mutation):
    with pytest.raises(ValueError):
        Scenario.from_dict(scenario_dict(**mutation))


def test_scenario_requires_core_keys():
    for key in ("name", "topology", "case"):
        obj = scenario_dict()
        del obj[key]
        with pytest.raises(ValueError):
            Scenario.from_dict(obj)


def test_fault_env_encoding():
    assert Fault(0, "after-claim", "kill").to_env() == "after-claim:kill"
    assert (
        Fault(0, "before-result-write", "pause", pause_ms=250).to_env()
        == "before-result-write:pause:250"
    )


def test_check_exactly_once_flags_duplicates_and_gaps():
    good = [{"event": "commit", "part_index": i} for i in range(3)]
    assert check_exactly_once(good, 3)
    assert not check_exactly_once(good + [{"event": "commit", "part_index": 1}], 3)
    assert not check_exactly_once(good[:2], 3)
    assert not check_exactly_once([], 1)


def test_free_port_is_bindable():
    port = free_port()
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", port))


def test_small_scenario_runs_end_to_end(tmp_path):
    input_path = tmp_path / "input.bin"
    input_path.write_bytes(b"0123456789abcdef")
    scenario = Scenario.from_dict(
        {
            "name": "echo-smoke",
            "topology": {"workers": 1},
            "case": {
                "case_id": "smoke-1",
                "agent_id": "echo",
                "agent_version": "1",
                "agent_params": {},
                "input_path": str(input_path),
                "output_path": str(tmp_path / "out.bin"),
                "cut_strategy": {"name": "byte_chunk"},
                "num_parts": 2,
                "initial_workers": 1,
                "task_lease_ms": 5_000,
                "startup_grace_ms": 60_000,
            },
            "assertions": ["case_completes", "exactly_once", "no_replays"],
            "timeout_s": 60,
        }
    )
    report = run_scenario(scenario, str(tmp_path / "artifacts"))
    assert report.passed
    assert (tmp_path / "out.bin").read_bytes() == b"0123456789abcdef"
    assert (tmp_path / "artifacts" / "scenario-report.json").exists()
