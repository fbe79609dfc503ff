"""Append-only JSONL execution log, shared by master and worker processes.

Activated by the SPACEFARM_EXEC_LOG environment variable (a file path); the
harness points every process of a scenario at its artifacts directory and
reconstructs the run from these lines. Each line is one event with a wall
clock timestamp so logs from different processes can be merged.
"""

from __future__ import annotations

import json
import os
import threading
import time
from typing import Any

ENV_VAR = "SPACEFARM_EXEC_LOG"


class ExecLog:
    def __init__(self, path: str | None = None) -> None:
        self._path = path
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls) -> "ExecLog":
        return cls(os.environ.get(ENV_VAR))

    @property
    def enabled(self) -> bool:
        return self._path is not None

    def emit(self, event: str, **fields: Any) -> None:
        if self._path is None:
            return
        record = {"event": event, "ts": time.time(), "pid": os.getpid(), **fields}
        line = json.dumps(record, sort_keys=True) + "\n"
        # One O_APPEND write per line keeps concurrent writers intact.
        with self._lock:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(line)


def load_events(paths: list[str]) -> list[dict[str, Any]]:
    events: list[dict[str, Any]] = []
    for path in paths:
        if not os.path.exists(path):
            continue
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
    events.sort(key=lambda e: e.get("ts", 0.0))
    return events
