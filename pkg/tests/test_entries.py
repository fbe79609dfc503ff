"""Entry kinds, payload codec, task state machine, and template matching."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spacefarm.entries import (
    ComputingTask,
    ConfigurationEntry,
    FileEntry,
    ResultEntry,
    RowEntry,
    SchedulerEntry,
    StopEntry,
    TaskState,
    Template,
    decode_payload,
    encode_payload,
    entry_from_wire,
    entry_to_wire,
    matchable_fields,
    new_entry_id,
    parse_entry_id,
)
from spacefarm.errors import InvalidTemplate, MalformedPayload


def sample_entries():
    task = ComputingTask("case-a", 0, "txn-1", TaskState.WAIT_FOR_COMPUTING, 42)
    return [
        FileEntry("case-a", 0, new_entry_id(), encode_payload(b"hello")),
        ResultEntry("case-a", 0, new_entry_id(), encode_payload(b"")),
        ConfigurationEntry("case-a", "echo", "1", {"delay_ms": "0"}, 4),
        StopEntry("case-a"),
        SchedulerEntry("case-a", (task,), "fifo"),
        RowEntry("case-a", "0", 3, ("1", "0.5", "-2.25e-1")),
    ]


def test_wire_roundtrip_every_kind():
    for entry in sample_entries():
        assert entry_from_wire(entry_to_wire(entry)) == entry


def test_wire_rejects_unknown_kind_and_missing_field():
    with pytest.raises(ValueError):
        entry_from_wire({"kind": "Mystery"})
    with pytest.raises(ValueError):
        entry_from_wire({"kind": "StopEntry"})


@given(st.binary(max_size=512))
def test_payload_codec_roundtrip(blob):
    assert decode_payload(encode_payload(blob)) == blob


def test_payload_codec_rejects_garbage():
    for bad in ("not base64!!", "AAA", "####"):
        with pytest.raises(MalformedPayload):
            decode_payload(bad)


def test_entry_id_parse_is_strict_identity():
    eid = new_entry_id()
    assert parse_entry_id(eid) == eid
    for bad in ("", "abc", eid.upper(), eid.replace("-", "_")):
        with pytest.raises(ValueError):
            parse_entry_id(bad)


def test_task_transitions():
    task = ComputingTask("c", 1, "t")
    on = task.with_state(TaskState.ON_COMPUTING)
    assert on.state is TaskState.ON_COMPUTING
    assert on.with_state(TaskState.COMPUTED).state is TaskState.COMPUTED
    assert on.with_state(TaskState.WAIT_FOR_COMPUTING).state is TaskState.WAIT_FOR_COMPUTING
    with pytest.raises(ValueError):
        task.with_state(TaskState.COMPUTED)  # must pass through ON_COMPUTING
    with pytest.raises(ValueError):
        on.with_state(TaskState.ON_COMPUTING)
    done = on.with_state(TaskState.COMPUTED)
    with pytest.raises(ValueError):
        done.with_state(TaskState.WAIT_FOR_COMPUTING)


def test_task_reissue_under_fresh_txn():
    task = ComputingTask("c", 1, "t-old", TaskState.ON_COMPUTING)
    fresh = task.with_txn("t-new", TaskState.WAIT_FOR_COMPUTING)
    assert fresh.txn_id == "t-new"
    assert fresh.state is TaskState.WAIT_FOR_COMPUTING
    assert fresh.part_index == 1


def test_template_matches_on_exact_scalar_equality():
    entry = FileEntry("case-a", 2, new_entry_id(), encode_payload(b"x"))
    assert Template("FileEntry").matches(entry)
    assert Template("FileEntry", {"case_id": "case-a", "part_index": 2}).matches(entry)
    assert not Template("FileEntry", {"part_index": 3}).matches(entry)
    assert not Template("StopEntry").matches(entry)


def test_template_rejects_unknown_kind_and_bulk_fields():
    with pytest.raises(InvalidTemplate):
        Template("Mystery")
    with pytest.raises(InvalidTemplate):
        Template("FileEntry", {"payload": "AAAA"})
    with pytest.raises(InvalidTemplate):
        Template("SchedulerEntry", {"tasks": ()})
    with pytest.raises(InvalidTemplate):
        Template("RowEntry", {"values": ()})


def test_matchable_fields_exclude_bulk_data():
    assert "payload" not in matchable_fields("FileEntry")
    assert "tasks" not in matchable_fields("SchedulerEntry")
    assert "values" not in matchable_fields("RowEntry")
    assert {"case_id", "matrix_id", "row_index"} <= matchable_fields("RowEntry")


def test_template_wire_roundtrip():
    template = Template("RowEntry", {"case_id": "c", "row_index": 7})
    assert Template.from_wire(template.to_wire()) == template
