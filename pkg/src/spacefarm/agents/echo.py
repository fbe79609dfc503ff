"""Identity agent for plumbing tests; optional delay to stretch task runtime."""

from __future__ import annotations

import time


def execute(data: bytes, params: dict, space=None) -> bytes:
    delay_ms = int(params.get("delay_ms", 0))
    if delay_ms > 0:
        time.sleep(delay_ms / 1000.0)
    return data
