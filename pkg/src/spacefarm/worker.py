"""Worker runtime: claim a task, run the agent, publish the result.

Claiming is the take-then-rewrite protocol on the SchedulerEntry, done under a
short transaction so a worker that dies mid-claim cannot lose the scheduler.
Execution happens under the task's own transaction (created by the master at
feed time): the FileEntry is read under it, the ResultEntry written under it,
and a heartbeat renews it at a third of its lease, so a dead worker is
detected by expiry and the task replayed.

Fault injection for the test harness is compiled in but dormant: the
SPACEFARM_FAULT environment variable arms hooks at fixed phases of
execution (after-claim, after-file-read, before-result-write,
before-computed-mark) with an action of kill, pause:<ms>, or abort-txn.
Each armed fault fires once per process.
"""

from __future__ import annotations

import logging
import os
import shutil
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .agents import CASE_ID_PARAM, AgentDescriptor, resolve
from .client import Session, WireSpaceHandle
from .entries import (
    ComputingTask,
    ConfigurationEntry,
    ResultEntry,
    SchedulerEntry,
    TaskState,
    Template,
    WorkerState,
    decode_payload,
    encode_payload,
    new_entry_id,
)
from .errors import (
    AgentNotFound,
    ConfigError,
    ConnectionFailed,
    SessionClosed,
    SpacefarmError,
    TxnNotOpen,
    UnknownTxn,
    VersionMismatch,
)
from .execlog import ExecLog

log = logging.getLogger(__name__)

FAULT_ENV_VAR = "SPACEFARM_FAULT"
FAULT_PHASES = (
    "after-claim",
    "after-file-read",
    "before-result-write",
    "before-computed-mark",
)
FAULT_ACTIONS = ("kill", "pause", "abort-txn")
KILL_EXIT_CODE = 17

CLAIM_TXN_LEASE_MS = 5_000
CLAIM_WAIT_MS = 800
CONFIG_WAIT_MS = 2_000
FILE_WAIT_MS = 2_000
MARK_DEADLINE_S = 15.0


@dataclass
class _Fault:
    phase: str
    action: str
    pause_ms: int = 0
    fired: bool = False


class FaultInjector:
    def __init__(self, faults: list[_Fault] | None = None) -> None:
        self._faults = faults or []

    @classmethod
    def from_env(cls) -> "FaultInjector":
        spec = os.environ.get(FAULT_ENV_VAR, "")
        faults = [cls._parse(tok) for tok in spec.split(";") if tok.strip()]
        return cls(faults)

    @staticmethod
    def _parse(token: str) -> _Fault:
        fields = token.strip().split(":")
        if len(fields) < 2:
            raise ConfigError(f"fault must be phase:action[:ms], got {token!r}")
        phase, action = fields[0], fields[1]
        if phase not in FAULT_PHASES:
            raise ConfigError(f"unknown fault phase {phase!r}")
        if action not in FAULT_ACTIONS:
            raise ConfigError(f"unknown fault action {action!r}")
        pause_ms = 0
        if action == "pause":
            if len(fields) != 3:
                raise ConfigError(f"pause fault needs a duration: {token!r}")
            pause_ms = int(fields[2])
        return _Fault(phase=phase, action=action, pause_ms=pause_ms)

    def fire(
        self,
        phase: str,
        execlog: ExecLog,
        session: Session | None = None,
        txn: str | None = None,
        **context,
    ) -> None:
        for fault in self._faults:
            if fault.fired or fault.phase != phase:
                continue
            fault.fired = True
            execlog.emit("fault", phase=phase, action=fault.action, **context)
            if fault.action == "kill":
                os._exit(KILL_EXIT_CODE)  # simulated crash: no cleanup at all
            elif fault.action == "pause":
                time.sleep(fault.pause_ms / 1000.0)
            elif fault.action == "abort-txn" and session is not None and txn:
                try:
                    session.txn_abort(txn)
                except SpacefarmError:
                    pass


class Worker:
    def __init__(
        self,
        space_address: str,
        scratch_dir: str,
        allowed_agents: list[str] | None = None,
        worker_id: str | None = None,
        poll_s: float = 1.0,
        injector: FaultInjector | None = None,
        execlog: ExecLog | None = None,
    ) -> None:
        self.space_address = space_address
        self.scratch_root = Path(scratch_dir)
        self.allowed_agents = set(allowed_agents) if allowed_agents else None
        self.worker_id = worker_id or new_entry_id()
        self.poll_s = poll_s
        self.faults = injector if injector is not None else FaultInjector.from_env()
        self.execlog = execlog if execlog is not None else ExecLog.from_env()
        self.state = WorkerState.WAIT_FOR_COMPUTING
        self._current: ComputingTask | None = None
        self._wake = threading.Event()
        self._agent_cache: dict[str, AgentDescriptor] = {}
        self._handle: WireSpaceHandle | None = None

    # -- lifecycle ---------------------------------------------------------------

    def run(self, stop: threading.Event | None = None) -> None:
        stop = stop if stop is not None else threading.Event()
        self._reset_scratch()
        backoff = 0.5
        while not stop.is_set():
            try:
                session = Session.connect(self.space_address)
            except ConnectionFailed:
                stop.wait(backoff)
                backoff = min(backoff * 2, 8.0)
                continue
            backoff = 0.5
            try:
                self._serve(session, stop)
            except (SessionClosed, ConnectionFailed):
                continue  # server went away; reconnect and resubscribe
            finally:
                session.close()
        if self._handle is not None:
            self._handle.close()

    def _reset_scratch(self) -> None:
        # Scratch files orphaned by a crash of the previous run under this
        # worker id are swept here.
        mine = self.scratch_root / self.worker_id
        shutil.rmtree(mine, ignore_errors=True)
        mine.mkdir(parents=True, exist_ok=True)

    def _serve(self, session: Session, stop: threading.Event) -> None:
        session.subscribe(Template("SchedulerEntry"), self._on_scheduler_event)
        session.subscribe(Template("StopEntry"), self._on_stop_event)
        self.execlog.emit("worker-started", worker_id=self.worker_id)
        while not stop.is_set():
            task = self._claim_next(session)
            if task is None:
                self._wake.wait(self.poll_s)
                self._wake.clear()
                continue
            self._execute(session, task)

    def _on_scheduler_event(self, seq: int, entry: SchedulerEntry) -> None:
        # Only wake for actual work; otherwise the restore fired by our own
        # empty-handed claim would ping-pong workers forever.
        if any(t.state == TaskState.WAIT_FOR_COMPUTING for t in entry.tasks):
            self._wake.set()

    def _on_stop_event(self, seq: int, entry) -> None:
        self._agent_cache.pop(entry.case_id, None)
        self.execlog.emit(
            "case-stopped", worker_id=self.worker_id, case_id=entry.case_id
        )

    # -- claiming -----------------------------------------------------------------

    def _claim_next(self, session: Session) -> ComputingTask | None:
        assert self._current is None, "worker already holds a task"
        txn = session.txn_create(CLAIM_TXN_LEASE_MS)
        try:
            sched = session.take(
                Template("SchedulerEntry"), txn=txn, timeout_ms=CLAIM_WAIT_MS
            )
            if sched is None:
                session.txn_abort(txn)
                return None
            for index, task in enumerate(sched.tasks):
                if task.state != TaskState.WAIT_FOR_COMPUTING:
                    continue
                claimed = task.with_state(TaskState.ON_COMPUTING)
                tasks = list(sched.tasks)
                tasks[index] = claimed
                session.write(
                    SchedulerEntry(
                        case_id=sched.case_id, tasks=tuple(tasks), policy=sched.policy
                    ),
                    txn=txn,
                )
                session.txn_commit(txn)
                self.execlog.emit(
                    "claimed",
                    worker_id=self.worker_id,
                    case_id=claimed.case_id,
                    part_index=claimed.part_index,
                    txn=claimed.txn_id,
                )
                return claimed
            session.txn_abort(txn)  # nothing eligible; put it back untouched
            return None
        except (TxnNotOpen, UnknownTxn):
            return None

    # -- execution -----------------------------------------------------------------

    def _execute(self, session: Session, task: ComputingTask) -> None:
        self._current = task
        self.state = WorkerState.ON_COMPUTING
        txn = task.txn_id
        stop_hb = threading.Event()
        lease_lost = threading.Event()
        heartbeat = threading.Thread(
            target=self._heartbeat,
            args=(session, txn, stop_hb, lease_lost),
            name="task-heartbeat",
            daemon=True,
        )
        heartbeat.start()
        scratch_file: Path | None = None
        try:
            self.faults.fire(
                "after-claim", self.execlog, session, txn,
                worker_id=self.worker_id, part_index=task.part_index,
            )
            config = session.read(
                Template("ConfigurationEntry", {"case_id": task.case_id}),
                timeout_ms=CONFIG_WAIT_MS,
            )
            if config is None:
                return self._abandon(session, task, "configuration-missing")
            if (
                self.allowed_agents is not None
                and config.agent_id not in self.allowed_agents
            ):
                return self._abandon(session, task, "agent-not-allowed")
            try:
                descriptor = self._agent_for(config)
            except (AgentNotFound, VersionMismatch) as exc:
                return self._abandon(session, task, f"agent-unavailable: {exc}")
            try:
                file_entry = session.read(
                    Template(
                        "FileEntry",
                        {"case_id": task.case_id, "part_index": task.part_index},
                    ),
                    txn=txn,
                    timeout_ms=FILE_WAIT_MS,
                )
            except (TxnNotOpen, UnknownTxn):
                return self._abandon(session, task, "lease-lost")
            if file_entry is None:
                return self._abandon(session, task, "file-entry-missing")
            self.faults.fire(
                "after-file-read", self.execlog, session, txn,
                worker_id=self.worker_id, part_index=task.part_index,
            )
            data = decode_payload(file_entry.payload)
            scratch_file = self._scratch_path(task)
            scratch_file.write_bytes(data)
            self.execlog.emit(
                "file-read",
                worker_id=self.worker_id,
                case_id=task.case_id,
                part_index=task.part_index,
                txn=txn,
            )
            params = dict(config.agent_params)
            params[CASE_ID_PARAM] = task.case_id
            try:
                output = descriptor.execute(data, params, self._space_handle())
            except SpacefarmError as exc:
                return self._abandon(session, task, f"agent-failure: {exc}")
            except Exception as exc:  # agent bug: replayable, not fatal
                return self._abandon(session, task, f"agent-failure: {exc!r}")
            if lease_lost.is_set():
                return self._abandon(session, task, "lease-lost")
            self.faults.fire(
                "before-result-write", self.execlog, session, txn,
                worker_id=self.worker_id, part_index=task.part_index,
            )
            try:
                session.write(
                    ResultEntry(
                        case_id=task.case_id,
                        part_index=task.part_index,
                        entry_id=new_entry_id(),
                        payload=encode_payload(output),
                    ),
                    txn=txn,
                )
            except (TxnNotOpen, UnknownTxn):
                return self._abandon(session, task, "lease-lost")
            self.execlog.emit(
                "result-written",
                worker_id=self.worker_id,
                case_id=task.case_id,
                part_index=task.part_index,
                txn=txn,
            )
            self.faults.fire(
                "before-computed-mark", self.execlog, session, txn,
                worker_id=self.worker_id, part_index=task.part_index,
            )
            if self._mark_computed(session, task):
                if scratch_file is not None:
                    scratch_file.unlink(missing_ok=True)
                self.execlog.emit(
                    "computed-marked",
                    worker_id=self.worker_id,
                    case_id=task.case_id,
                    part_index=task.part_index,
                    txn=txn,
                )
        finally:
            stop_hb.set()
            self._current = None
            self.state = WorkerState.WAIT_FOR_COMPUTING

    def _scratch_path(self, task: ComputingTask) -> Path:
        directory = self.scratch_root / self.worker_id / task.case_id
        directory.mkdir(parents=True, exist_ok=True)
        return directory / f"part-{task.part_index}.bin"

    def _agent_for(self, config: ConfigurationEntry) -> AgentDescriptor:
        cached = self._agent_cache.get(config.case_id)
        if cached is not None:
            return cached
        descriptor = resolve(config.agent_id, config.agent_version)
        self._agent_cache[config.case_id] = descriptor
        return descriptor

    def _space_handle(self) -> WireSpaceHandle:
        # Agents may block on reads mid-execution; give them their own
        # connection so the control session stays responsive.
        if self._handle is None:
            self._handle = WireSpaceHandle(self.space_address)
        return self._handle

    def _heartbeat(
        self,
        session: Session,
        txn: str,
        stop: threading.Event,
        lease_lost: threading.Event,
    ) -> None:
        try:
            rec = session.txn_status(txn)
        except SpacefarmError:
            lease_lost.set()
            return
        if rec.state != "OPEN":
            lease_lost.set()
            return
        period = max(rec.lease_ms / 3.0 / 1000.0, 0.05)
        while not stop.wait(period):
            try:
                session.txn_renew(txn, rec.lease_ms)
            except SpacefarmError:
                lease_lost.set()
                return

    def _mark_computed(self, session: Session, task: ComputingTask) -> bool:
        deadline = time.monotonic() + MARK_DEADLINE_S
        template = Template("SchedulerEntry", {"case_id": task.case_id})
        while True:
            txn_m = session.txn_create(CLAIM_TXN_LEASE_MS)
            sched = session.take(template, txn=txn_m, timeout_ms=2_000)
            if sched is None:
                session.txn_abort(txn_m)
                if time.monotonic() > deadline:
                    self._abandon(session, task, "scheduler-unavailable")
                    return False
                continue
            index = next(
                (
                    i
                    for i, t in enumerate(sched.tasks)
                    if t.part_index == task.part_index and t.case_id == task.case_id
                ),
                None,
            )
            current = sched.tasks[index] if index is not None else None
            if (
                current is None
                or current.txn_id != task.txn_id
                or current.state != TaskState.ON_COMPUTING
            ):
                # The master replayed this part while we were computing; our
                # transaction is void and the fresh attempt owns the result.
                session.txn_abort(txn_m)
                self._abandon(session, task, "task-superseded")
                return False
            tasks = list(sched.tasks)
            tasks[index] = current.with_state(TaskState.COMPUTED)
            session.write(
                SchedulerEntry(
                    case_id=sched.case_id, tasks=tuple(tasks), policy=sched.policy
                ),
                txn=txn_m,
            )
            session.txn_commit(txn_m)
            return True

    def _abandon(self, session: Session, task: ComputingTask, reason: str) -> None:
        try:
            session.txn_abort(task.txn_id)
        except (TxnNotOpen, UnknownTxn):
            pass
        except SpacefarmError:
            pass
        self.execlog.emit(
            "task-abandoned",
            worker_id=self.worker_id,
            case_id=task.case_id,
            part_index=task.part_index,
            txn=task.txn_id,
            reason=reason,
        )
