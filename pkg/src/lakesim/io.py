"""Snapshot files and diagnostics CSV."""
from __future__ import annotations

import struct

import numpy as np

SNAPSHOT_MAGIC = b"LSF1\x00\x00\x00\x00"
_SNAP_HEADER = struct.Struct("<8sqdq")
CSV_VERSION_LINE = "# lake-salt-sim v1"
CSV_COLUMNS = ("t", "l2b", "linf", "hk", "divres", "cutoff", "stopped")


class SnapshotError(ValueError):
    pass


def write_snapshot(path, fields, t):
    """Write ``fields`` (shape ``(count, n, n)`` or ``(n, n)``) taken at time ``t``."""
    arr = np.asarray(fields, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise SnapshotError(f"snapshot fields must have shape (count, n, n), got {arr.shape}")
    count, n, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, n, float(t), count))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path):
    """Return ``(t, fields)`` with ``fields`` of shape ``(count, n, n)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SNAP_HEADER.size:
        raise SnapshotError(f"{path}: truncated snapshot header")
    magic, n, t, count = _SNAP_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}, expected {SNAPSHOT_MAGIC!r}")
    if n <= 0 or count < 0:
        raise SnapshotError(f"{path}: invalid header (n = {n}, count = {count})")
    payload = raw[_SNAP_HEADER.size:]
    if len(payload) != 8 * count * n * n:
        raise SnapshotError(f"{path}: truncated snapshot payload "
                            f"({len(payload)} bytes, expected {8 * count * n * n})")
    fields = np.frombuffer(payload, dtype="<f8").reshape(count, n, n).astype(float)
    return t, fields


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return repr(float(v))


def format_rows(rows):
    lines = [CSV_VERSION_LINE, ",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def write_diagnostics_csv(rows, fh):
    fh.write(format_rows(rows))


def read_diagnostics_csv(text):
    """Parse diagnostics CSV text into a dict of column arrays."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_VERSION_LINE:
        raise ValueError(f"missing version line {CSV_VERSION_LINE!r}")
    header = tuple(lines[1].split(","))
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected columns {header}")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]]).reshape(-1, len(header))
    return {c: data[:, i] for i, c in enumerate(header)}


def write_table_csv(fh, columns, rows):
    fh.write(CSV_VERSION_LINE + "\n")
    fh.write(",".join(columns) + "\n")
    for row in rows:
        fh.write(",".join(_fmt(v) if not isinstance(v, (int, np.integer)) or isinstance(v, bool)
                          else str(v) for v in row) + "\n")
