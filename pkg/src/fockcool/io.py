"""CSV output with ``#`` metadata lines ahead of the header row."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

__all__ = ["SCHEMA_VERSION", "write_csv", "read_csv"]

SCHEMA_VERSION = "fockcool-csv/1"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_csv(path, columns, rows, meta: dict | None = None) -> Path:
    """Write ``rows`` under ``columns``; ``meta`` goes first as ``# key: value`` lines.

    Floats are written with ``repr`` so they read back bit for bit.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema: {SCHEMA_VERSION}\n")
        for key, value in (meta or {}).items():
            text = str(value).replace("\n", " ")
            fh.write(f"# {key}: {text}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} fields, expected {len(columns)}")
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(meta, columns, data)`` with ``data`` a float array of shape (rows, columns)."""
    meta = {}
    lines = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line.strip():
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    data = np.array([[float(x) for x in row] for row in reader], dtype=float).reshape(-1, len(columns))
    return meta, columns, data
