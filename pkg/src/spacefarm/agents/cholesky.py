"""Row-partitioned Cholesky factorization agent.

A factorization of an L x L symmetric positive definite matrix is split into P
tasks; task r owns the rows j with j mod P = r. The tasks iterate over columns
in lockstep: the owner of row i completes it, publishes it as a RowEntry
(written without a transaction so tasks inside other transactions can read
it), and everyone else block-reads it before filling column i of their own
rows.

Determinism across P: every factor element is computed by the same sequence
of float operations regardless of the partitioning, and published rows travel
as 17-significant-digit decimals, which round-trip 64-bit floats exactly. The
assembled factor is therefore bit-identical for every worker count.

All matrix I/O is text: a matrix file is the dimension on the first line and
one whitespace-separated row per line; a multi-channel file holds several such
blocks separated by blank lines.
"""

from __future__ import annotations

import math

from ..entries import RowEntry, Template
from ..errors import NotPositiveDefinite, RowTimeout
from . import CASE_ID_PARAM

DEFAULT_ROW_TIMEOUT_MS = 60_000


def format_value(x: float) -> str:
    return format(x, ".17g")


# -- matrix file format -----------------------------------------------------------


def parse_matrix_block(lines: list[str]) -> list[list[float]]:
    if not lines:
        raise ValueError("empty matrix block")
    try:
        size = int(lines[0].strip())
    except ValueError:
        raise ValueError(f"matrix block must start with its dimension, got {lines[0]!r}")
    if size < 1:
        raise ValueError(f"matrix dimension must be positive, got {size}")
    if len(lines) != size + 1:
        raise ValueError(f"expected {size} rows, got {len(lines) - 1}")
    rows = []
    for line in lines[1:]:
        row = [float(tok) for tok in line.split()]
        if len(row) != size:
            raise ValueError(f"expected {size} values per row, got {len(row)}")
        rows.append(row)
    for i in range(size):
        for j in range(i):
            if rows[i][j] != rows[j][i]:
                raise ValueError(f"matrix is not symmetric at ({i},{j})")
    return rows


def parse_matrices(text: str) -> list[list[list[float]]]:
    """Parse a matrix file into its blocks (one per blank-line-separated matrix)."""
    blocks: list[list[str]] = []
    current: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            if current:
                blocks.append(current)
                current = []
        else:
            current.append(line)
    if current:
        blocks.append(current)
    if not blocks:
        raise ValueError("no matrices in input")
    return [parse_matrix_block(b) for b in blocks]


def format_matrix(rows: list[list[float]]) -> str:
    size = len(rows)
    lines = [str(size)]
    for row in rows:
        lines.append(" ".join(format_value(v) for v in row))
    return "\n".join(lines) + "\n"


# -- part and result payloads ---------------------------------------------------


def format_part(
    matrix_id: int, rank: int, p: int, size: int, rows: dict[int, list[float]]
) -> bytes:
    lines = [f"part {matrix_id} {rank} {p} {size}"]
    for j in sorted(rows):
        lines.append(f"{j} " + " ".join(format_value(v) for v in rows[j]))
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_part(data: bytes) -> tuple[int, int, int, int, dict[int, list[float]]]:
    lines = [ln for ln in data.decode("utf-8").splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("part "):
        raise ValueError("part payload must start with a 'part' header")
    fields = lines[0].split()
    if len(fields) != 5:
        raise ValueError(f"malformed part header: {lines[0]!r}")
    matrix_id, rank, p, size = (int(f) for f in fields[1:])
    if not (size >= 1 and 1 <= p <= size and 0 <= rank < p):
        raise ValueError(f"inconsistent part header: {lines[0]!r}")
    rows: dict[int, list[float]] = {}
    for line in lines[1:]:
        toks = line.split()
        j = int(toks[0])
        row = [float(t) for t in toks[1:]]
        if len(row) != size:
            raise ValueError(f"row {j} has {len(row)} values, expected {size}")
        rows[j] = row
    expected = set(range(rank, size, p))
    if set(rows) != expected:
        raise ValueError(f"part rows {sorted(rows)} do not match rank {rank} of {p}")
    return matrix_id, rank, p, size, rows


def format_rows(matrix_id: int, size: int, rows: dict[int, list[float]]) -> bytes:
    lines = [f"rows {matrix_id} {size}"]
    for j in sorted(rows):
        lines.append(f"{j} " + " ".join(format_value(v) for v in rows[j]))
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_rows(data: bytes) -> tuple[int, int, dict[int, list[float]]]:
    lines = [ln for ln in data.decode("utf-8").splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("rows "):
        raise ValueError("result payload must start with a 'rows' header")
    fields = lines[0].split()
    if len(fields) != 3:
        raise ValueError(f"malformed rows header: {lines[0]!r}")
    matrix_id, size = int(fields[1]), int(fields[2])
    rows: dict[int, list[float]] = {}
    for line in lines[1:]:
        toks = line.split()
        j = int(toks[0])
        row = [float(t) for t in toks[1:]]
        if len(row) != j + 1:
            raise ValueError(f"factor row {j} has {len(row)} values, expected {j + 1}")
        rows[j] = row
    return matrix_id, size, rows


# -- execution --------------------------------------------------------------------


def execute(data: bytes, params: dict, space=None) -> bytes:
    matrix_id, rank, p, size, a_rows = parse_part(data)
    case_id = params.get(CASE_ID_PARAM, "")
    row_timeout_ms = int(params.get("row_timeout_ms", DEFAULT_ROW_TIMEOUT_MS))
    if p > 1 and space is None:
        raise ValueError("multi-task factorization needs space access")

    owned = sorted(a_rows)
    lrows: dict[int, list[float]] = {j: [0.0] * (j + 1) for j in owned}

    for i in range(size):
        if i % p == rank:
            li = lrows[i]
            s = 0.0
            for k in range(i):
                s += li[k] * li[k]
            pivot = a_rows[i][i] - s
            if not pivot > 0.0:
                raise NotPositiveDefinite(
                    f"matrix {matrix_id}: pivot {pivot!r} at row {i}"
                )
            li[i] = math.sqrt(pivot)
            row_i = li
            if p > 1:
                space.write(
                    RowEntry(
                        case_id=case_id,
                        matrix_id=str(matrix_id),
                        row_index=i,
                        values=tuple(format_value(v) for v in li),
                    )
                )
        else:
            template = Template(
                "RowEntry",
                {"case_id": case_id, "matrix_id": str(matrix_id), "row_index": i},
            )
            entry = space.read(template, timeout_ms=row_timeout_ms)
            if entry is None:
                raise RowTimeout(
                    f"row {i} of matrix {matrix_id} not published "
                    f"within {row_timeout_ms} ms"
                )
            row_i = [float(v) for v in entry.values]
        lii = row_i[i]
        for j in owned:
            if j <= i:
                continue
            lj = lrows[j]
            s = 0.0
            for k in range(i):
                s += lj[k] * row_i[k]
            lj[i] = (a_rows[j][i] - s) / lii

    return format_rows(matrix_id, size, lrows)


def assemble(results: list[bytes]) -> bytes:
    """Merge per-task factor rows into full matrix blocks, one per matrix_id."""
    by_matrix: dict[int, tuple[int, dict[int, list[float]]]] = {}
    for payload in results:
        matrix_id, size, rows = parse_rows(payload)
        held = by_matrix.setdefault(matrix_id, (size, {}))
        if held[0] != size:
            raise ValueError(f"matrix {matrix_id} has conflicting sizes")
        held[1].update(rows)
    blocks = []
    for matrix_id in sorted(by_matrix):
        size, rows = by_matrix[matrix_id]
        missing = [j for j in range(size) if j not in rows]
        if missing:
            raise ValueError(f"matrix {matrix_id} is missing factor rows {missing}")
        full = [rows[j] + [0.0] * (size - 1 - j) for j in range(size)]
        blocks.append(format_matrix(full))
    return "\n".join(blocks).encode("utf-8")
