"""Lease-based transaction manager.

Every transaction is a leased visibility scope over the space: commit promotes
its writes and finalizes its takes, abort (explicit or by lease expiry) undoes
both.  Expiry is the failure detector of the whole architecture: a worker that
stops renewing its task transaction is presumed dead and its task is replayed.

The manager shares one lock with the space so a transaction check and the
operation it guards are a single atomic step.  The commit path keeps the
prepare/apply two-phase structure even though the only participant is the
in-process space.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable

from .entries import new_entry_id
from .errors import ParticipantUnreachable, TxnNotOpen, UnknownTxn

OPEN = "OPEN"
COMMITTED = "COMMITTED"
ABORTED = "ABORTED"

MIN_LEASE_MS = 100
DEFAULT_TASK_LEASE_MS = 30_000


@dataclass
class TxnRecord:
    txn_id: str
    state: str
    lease_ms: int
    deadline: float
    tag: str | None = None


@dataclass
class _AbortSub:
    sub_id: str
    tag: str | None  # None matches every abort
    callback: Callable[[str, str, str | None], None]


class TxnManager:
    def __init__(
        self,
        participant,
        lock: threading.RLock | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self._participant = participant
        self._lock = lock if lock is not None else threading.RLock()
        self._clock = clock
        self._records: dict[str, TxnRecord] = {}
        self._abort_subs: dict[str, _AbortSub] = {}

    # -- lifecycle -------------------------------------------------------------

    def create(self, lease_ms: int, tag: str | None = None) -> str:
        if lease_ms < MIN_LEASE_MS:
            raise ValueError(f"lease_ms must be >= {MIN_LEASE_MS}, got {lease_ms}")
        with self._lock:
            txn_id = new_entry_id()
            self._records[txn_id] = TxnRecord(
                txn_id=txn_id,
                state=OPEN,
                lease_ms=lease_ms,
                deadline=self._clock() + lease_ms / 1000.0,
                tag=tag,
            )
            return txn_id

    def renew(self, txn_id: str, lease_ms: int) -> None:
        if lease_ms < MIN_LEASE_MS:
            raise ValueError(f"lease_ms must be >= {MIN_LEASE_MS}, got {lease_ms}")
        with self._lock:
            rec = self._open_record(txn_id)
            rec.lease_ms = lease_ms
            rec.deadline = self._clock() + lease_ms / 1000.0

    def commit(self, txn_id: str) -> None:
        with self._lock:
            rec = self._open_record(txn_id)
            try:
                self._participant.prepare(txn_id)
                self._participant.commit_apply(txn_id)
            except Exception as exc:
                # One retry, then fall back to abort so the transaction still
                # reaches exactly one terminal state.
                try:
                    self._participant.prepare(txn_id)
                    self._participant.commit_apply(txn_id)
                except Exception:
                    self._finish_abort(rec)
                    raise ParticipantUnreachable(str(exc)) from exc
            rec.state = COMMITTED

    def abort(self, txn_id: str) -> None:
        with self._lock:
            rec = self._open_record(txn_id)
            self._finish_abort(rec)

    def _finish_abort(self, rec: TxnRecord) -> None:
        rec.state = ABORTED
        self._participant.abort_apply(rec.txn_id)
        for sub in list(self._abort_subs.values()):
            if sub.tag is None or sub.tag == rec.tag:
                sub.callback(sub.sub_id, rec.txn_id, rec.tag)

    def _open_record(self, txn_id: str) -> TxnRecord:
        rec = self._records.get(txn_id)
        if rec is None:
            raise UnknownTxn(f"unknown transaction: {txn_id}")
        if rec.state != OPEN:
            raise TxnNotOpen(f"transaction {txn_id} is {rec.state}")
        return rec

    # -- queries ---------------------------------------------------------------

    def status(self, txn_id: str) -> TxnRecord:
        with self._lock:
            rec = self._records.get(txn_id)
            if rec is None:
                raise UnknownTxn(f"unknown transaction: {txn_id}")
            return TxnRecord(
                txn_id=rec.txn_id,
                state=rec.state,
                lease_ms=rec.lease_ms,
                deadline=rec.deadline,
                tag=rec.tag,
            )

    def is_open(self, txn_id: str) -> bool:
        with self._lock:
            rec = self._records.get(txn_id)
            return rec is not None and rec.state == OPEN

    def open_count(self) -> int:
        with self._lock:
            return sum(1 for r in self._records.values() if r.state == OPEN)

    # -- expiry and shutdown -----------------------------------------------------

    def sweep(self) -> list[str]:
        """Abort every open transaction whose lease has expired."""
        with self._lock:
            now = self._clock()
            expired = [
                rec
                for rec in self._records.values()
                if rec.state == OPEN and rec.deadline <= now
            ]
            for rec in expired:
                self._finish_abort(rec)
            return [rec.txn_id for rec in expired]

    def abort_all(self) -> list[str]:
        with self._lock:
            live = [rec for rec in self._records.values() if rec.state == OPEN]
            for rec in live:
                self._finish_abort(rec)
            return [rec.txn_id for rec in live]

    # -- abort events -------------------------------------------------------------

    def subscribe_aborts(
        self,
        callback: Callable[[str, str, str | None], None],
        tag: str | None = None,
    ) -> str:
        """At-least-once delivery of every abort whose tag matches the filter.

        The callback runs under the manager lock; it must only enqueue.
        """
        with self._lock:
            sub_id = new_entry_id()
            self._abort_subs[sub_id] = _AbortSub(sub_id, tag, callback)
            return sub_id

    def unsubscribe_aborts(self, sub_id: str) -> None:
        with self._lock:
            self._abort_subs.pop(sub_id, None)


class SweepLoop(threading.Thread):
    """Periodic expiry scan; the server runs one per manager."""

    def __init__(self, manager: TxnManager, period_ms: int = 100) -> None:
        super().__init__(name="txn-sweeper", daemon=True)
        self._manager = manager
        self._period = period_ms / 1000.0
        self._stop = threading.Event()

    def run(self) -> None:
        while not self._stop.wait(self._period):
            self._manager.sweep()

    def stop(self) -> None:
        self._stop.set()
