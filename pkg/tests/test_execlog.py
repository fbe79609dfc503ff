"""Execution log: env activation, append semantics, multi-file merge."""

import json
import os

from spacefarm.execlog import ENV_VAR, ExecLog, load_events


def test_disabled_log_writes_nothing(tmp_path, monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    log = ExecLog.from_env()
    assert not log.enabled
    log.emit("claimed", worker_id="w0")
    assert list(tmp_path.iterdir()) == []


def test_from_env_points_at_file(tmp_path, monkeypatch):
    path = tmp_path / "events.jsonl"
    monkeypatch.setenv(ENV_VAR, str(path))
    log = ExecLog.from_env()
    assert log.enabled
    log.emit("feed", part_index=3)
    log.emit("commit", part_index=3)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert first["event"] == "feed"
    assert first["part_index"] == 3
    assert first["pid"] == os.getpid()
    assert "ts" in first


def test_load_events_merges_and_sorts_by_timestamp(tmp_path):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    a.write_text(
        json.dumps({"event": "late", "ts": 5.0}) + "\n"
        + json.dumps({"event": "early", "ts": 1.0}) + "\n"
    )
    b.write_text(json.dumps({"event": "middle", "ts": 3.0}) + "\n")
    events = load_events([str(a), str(b), str(tmp_path / "missing.jsonl")])
    assert [e["event"] for e in events] == ["early", "middle", "late"]


def test_load_events_skips_blank_lines(tmp_path):
    path = tmp_path / "gaps.jsonl"
    path.write_text("\n" + json.dumps({"event": "only", "ts": 1.0}) + "\n\n")
    assert [e["event"] for e in load_events([str(path)])] == ["only"]
