"""Shared fixtures and oracles: in-process server, cluster runner, reference
implementations for pi digits and Cholesky factors."""

from __future__ import annotations

import math
import random
import threading

import mpmath
import pytest

from spacefarm.client import Session
from spacefarm.execlog import ExecLog
from spacefarm.master import CaseConfig, Master
from spacefarm.server import SpaceServer
from spacefarm.worker import FaultInjector, Worker


class FakeClock:
    """Manually advanced monotonic clock for lease tests."""

    def __init__(self, start: float = 1_000.0) -> None:
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def fake_clock():
    return FakeClock()


@pytest.fixture
def server():
    srv = SpaceServer(host="127.0.0.1", port=0, txn_sweep_ms=25)
    srv.start()
    yield srv
    srv.shutdown(drain_ms=0)


@pytest.fixture
def address(server):
    host, port = server.address
    return f"{host}:{port}"


@pytest.fixture
def session(address):
    sess = Session.connect(address)
    yield sess
    sess.close()


# -- numeric oracles ---------------------------------------------------------------


def pi_hex(start: int, count: int) -> str:
    """Fractional hex digits of pi at positions start..start+count-1,
    from arbitrary-precision evaluation (independent of the package kernels)."""
    last = start + count - 1
    with mpmath.workprec(4 * last + 64):
        scaled = mpmath.floor((mpmath.pi - 3) * mpmath.power(16, last))
    return format(int(scaled), "X").zfill(last)[start - 1 :]


def cholesky_oracle(a: list[list[float]]) -> list[list[float]]:
    """Sequential lower-triangular factorization, same element-op order as the
    row-partitioned agent (so results should agree to the last bit)."""
    size = len(a)
    factor = [[0.0] * size for _ in range(size)]
    for i in range(size):
        s = 0.0
        for k in range(i):
            s += factor[i][k] * factor[i][k]
        pivot = a[i][i] - s
        if not pivot > 0.0:
            raise ValueError(f"not positive definite at row {i}")
        factor[i][i] = math.sqrt(pivot)
        for j in range(i + 1, size):
            s = 0.0
            for k in range(i):
                s += factor[j][k] * factor[i][k]
            factor[j][i] = (a[j][i] - s) / factor[i][i]
    return factor


def spd_matrix(size: int, seed: int) -> list[list[float]]:
    """Random symmetric positive definite matrix (B·Bᵀ plus a diagonal shift)."""
    rng = random.Random(seed)
    b = [[rng.uniform(-1.0, 1.0) for _ in range(size)] for _ in range(size)]
    a = [
        [sum(b[i][k] * b[j][k] for k in range(size)) for j in range(size)]
        for i in range(size)
    ]
    for i in range(size):
        a[i][i] += float(size)
    return a


# -- in-process cluster runner -------------------------------------------------------


def make_case_config(tmp_path, address: str, *, input_bytes: bytes, **overrides) -> CaseConfig:
    input_path = tmp_path / "input.bin"
    input_path.write_bytes(input_bytes)
    out_dir = tmp_path / "out"
    out_dir.mkdir(exist_ok=True)
    fields = dict(
        case_id="case-1",
        space_address=address,
        agent_id="echo",
        agent_version="1",
        agent_params={},
        input_path=str(input_path),
        output_path=str(out_dir / "result.bin"),
        cut_name="byte_chunk",
        cut_params={},
        num_parts=4,
        initial_workers=1,
        task_lease_ms=10_000,
        max_attempts=5,
        backoff_base_ms=100,
        tmp_dir=str(tmp_path / "parts"),
        startup_grace_ms=120_000,
    )
    fields.update(overrides)
    return CaseConfig(**fields)


def run_case_with_workers(
    config: CaseConfig,
    num_workers: int,
    tmp_path,
    *,
    allowed_agents: list[str] | None = None,
    injectors: dict[int, FaultInjector] | None = None,
    execlog_dir=None,
    poll_s: float = 0.2,
):
    """Run a case against worker threads sharing the configured space."""
    stop = threading.Event()
    threads = []
    for index in range(num_workers):
        execlog = (
            ExecLog(str(execlog_dir / f"worker-{index}.jsonl"))
            if execlog_dir is not None
            else ExecLog(None)
        )
        worker = Worker(
            config.space_address,
            str(tmp_path / f"scratch-{index}"),
            allowed_agents=allowed_agents,
            worker_id=f"w{index}",
            poll_s=poll_s,
            injector=(injectors or {}).get(index, FaultInjector([])),
            execlog=execlog,
        )
        thread = threading.Thread(
            target=worker.run, args=(stop,), name=f"test-worker-{index}", daemon=True
        )
        thread.start()
        threads.append(thread)
    try:
        master_log = (
            ExecLog(str(execlog_dir / "master.jsonl"))
            if execlog_dir is not None
            else ExecLog(None)
        )
        return Master(config, execlog=master_log).run()
    finally:
        stop.set()
        for thread in threads:
            thread.join(timeout=15)
