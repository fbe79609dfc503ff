"""Entry kinds stored in the space, task/worker state machines, payload codec.

Entries are immutable values; the space never mutates one in place.  A change
is always expressed as take-then-rewrite of a whole entry.  Each kind carries
a ``kind`` tag used for template matching and for the wire representation
(a flat JSON object with the ``kind`` key plus the entry fields).

Payload-like fields (``payload``, ``tasks``, ``values``) are opaque to the
matcher: templates may only constrain scalar fields.
"""

from __future__ import annotations

import base64
import binascii
import re
import uuid
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, ClassVar

from .errors import InvalidTemplate, MalformedPayload

_UUID_RE = re.compile(
    r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$"
)

# Fields that hold bulk data or nested structures; never matchable.
_UNMATCHABLE_FIELDS = {"payload", "tasks", "values"}


def new_entry_id() -> str:
    """Random 128-bit identifier in canonical 8-4-4-4-12 hex form."""
    return str(uuid.uuid4())


def parse_entry_id(text: str) -> str:
    """Validate canonical UUID text; returns the id unchanged.

    Only the 36-character lowercase canonical form is accepted, so
    parse(print(id)) is the identity.
    """
    if not isinstance(text, str) or not _UUID_RE.match(text):
        raise ValueError(f"not a canonical entry id: {text!r}")
    return text


def encode_payload(data: bytes) -> str:
    """Bytes to standard-alphabet Base64 text with padding, no line breaks."""
    return base64.b64encode(data).decode("ascii")


def decode_payload(text: str) -> bytes:
    """Inverse of encode_payload; rejects illegal characters and bad padding."""
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, ValueError, UnicodeEncodeError) as exc:
        raise MalformedPayload(f"invalid base64 payload: {exc}") from exc


class TaskState(str, Enum):
    WAIT_FOR_COMPUTING = "WAIT_FOR_COMPUTING"
    ON_COMPUTING = "ON_COMPUTING"
    COMPUTED = "COMPUTED"


class WorkerState(str, Enum):
    WAIT_FOR_COMPUTING = "WAIT_FOR_COMPUTING"
    ON_COMPUTING = "ON_COMPUTING"


# Forward transitions plus the abort-driven reset back to the queue.
_TASK_TRANSITIONS = {
    (TaskState.WAIT_FOR_COMPUTING, TaskState.ON_COMPUTING),
    (TaskState.ON_COMPUTING, TaskState.COMPUTED),
    (TaskState.ON_COMPUTING, TaskState.WAIT_FOR_COMPUTING),
}


def check_task_transition(old: TaskState, new: TaskState) -> None:
    if (old, new) not in _TASK_TRANSITIONS:
        raise ValueError(f"illegal task transition {old.value} -> {new.value}")


@dataclass(frozen=True)
class ComputingTask:
    """One unit of work queued on the scheduler."""

    case_id: str
    part_index: int
    txn_id: str
    state: TaskState = TaskState.WAIT_FOR_COMPUTING
    enqueued_at: int = 0

    def with_state(self, new_state: TaskState) -> "ComputingTask":
        check_task_transition(self.state, new_state)
        return replace(self, state=new_state)

    def with_txn(self, txn_id: str, state: TaskState) -> "ComputingTask":
        """Reissue under a fresh transaction (replay path)."""
        return replace(self, txn_id=txn_id, state=state)

    def to_wire(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "part_index": self.part_index,
            "txn_id": self.txn_id,
            "state": self.state.value,
            "enqueued_at": self.enqueued_at,
        }

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "ComputingTask":
        return cls(
            case_id=obj["case_id"],
            part_index=int(obj["part_index"]),
            txn_id=obj["txn_id"],
            state=TaskState(obj["state"]),
            enqueued_at=int(obj["enqueued_at"]),
        )


@dataclass(frozen=True)
class FileEntry:
    kind: ClassVar[str] = "FileEntry"
    case_id: str
    part_index: int
    entry_id: str
    payload: str  # Base64 text


@dataclass(frozen=True)
class ResultEntry:
    kind: ClassVar[str] = "ResultEntry"
    case_id: str
    part_index: int
    entry_id: str
    payload: str  # Base64 text


@dataclass(frozen=True)
class ConfigurationEntry:
    kind: ClassVar[str] = "ConfigurationEntry"
    case_id: str
    agent_id: str
    agent_version: str
    agent_params: dict[str, str] = field(default_factory=dict)
    num_parts: int = 0


@dataclass(frozen=True)
class StopEntry:
    kind: ClassVar[str] = "StopEntry"
    case_id: str


@dataclass(frozen=True)
class SchedulerEntry:
    kind: ClassVar[str] = "SchedulerEntry"
    case_id: str
    tasks: tuple[ComputingTask, ...] = ()
    policy: str = "fifo"


@dataclass(frozen=True)
class RowEntry:
    """Factor row published for sibling tasks of a row-partitioned solve.

    Written without a transaction so tasks running under other transactions
    can read it; the master sweeps leftovers when the case finishes.
    """

    kind: ClassVar[str] = "RowEntry"
    case_id: str
    matrix_id: str
    row_index: int
    values: tuple[str, ...] = ()  # decimal text, round-trip exact


Entry = (
    FileEntry
    | ResultEntry
    | ConfigurationEntry
    | StopEntry
    | SchedulerEntry
    | RowEntry
)

ENTRY_KINDS: dict[str, type] = {
    cls.kind: cls
    for cls in (
        FileEntry,
        ResultEntry,
        ConfigurationEntry,
        StopEntry,
        SchedulerEntry,
        RowEntry,
    )
}


def matchable_fields(kind: str) -> set[str]:
    cls = ENTRY_KINDS[kind]
    return {f.name for f in fields(cls)} - _UNMATCHABLE_FIELDS


def entry_to_wire(entry: Entry) -> dict[str, Any]:
    obj: dict[str, Any] = {"kind": entry.kind}
    for f in fields(entry):
        value = getattr(entry, f.name)
        if f.name == "tasks":
            value = [t.to_wire() for t in value]
        elif f.name == "values":
            value = list(value)
        elif f.name == "agent_params":
            value = dict(value)
        obj[f.name] = value
    return obj


def entry_from_wire(obj: dict[str, Any]) -> Entry:
    kind = obj.get("kind")
    cls = ENTRY_KINDS.get(kind)
    if cls is None:
        raise ValueError(f"unknown entry kind: {kind!r}")
    kwargs: dict[str, Any] = {}
    for f in fields(cls):
        if f.name not in obj:
            raise ValueError(f"{kind} missing field {f.name!r}")
        value = obj[f.name]
        if f.name == "tasks":
            value = tuple(ComputingTask.from_wire(t) for t in value)
        elif f.name == "values":
            value = tuple(str(v) for v in value)
        elif f.name in ("part_index", "num_parts", "row_index"):
            value = int(value)
        kwargs[f.name] = value
    return cls(**kwargs)


@dataclass(frozen=True)
class Template:
    """Partial entry: a kind tag plus exact-equality constraints.

    Unconstrained fields are wildcards.  Constraint keys must name scalar
    fields of the kind; bulk fields are rejected at construction time.
    """

    kind: str
    constraints: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ENTRY_KINDS:
            raise InvalidTemplate(f"unknown entry kind: {self.kind!r}")
        allowed = matchable_fields(self.kind)
        bad = set(self.constraints) - allowed
        if bad:
            raise InvalidTemplate(
                f"non-matchable fields for {self.kind}: {sorted(bad)}"
            )

    def matches(self, entry: Entry) -> bool:
        if entry.kind != self.kind:
            return False
        return all(
            getattr(entry, name) == value
            for name, value in self.constraints.items()
        )

    def to_wire(self) -> dict[str, Any]:
        return {"kind": self.kind, "constraints": dict(self.constraints)}

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "Template":
        try:
            return cls(kind=obj["kind"], constraints=dict(obj.get("constraints") or {}))
        except (KeyError, TypeError) as exc:
            raise InvalidTemplate(f"malformed template: {exc}") from exc


def matches(template: Template, entry: Entry) -> bool:
    return template.matches(entry)
