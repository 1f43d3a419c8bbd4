"""CSV and manifest helpers.

Floats are written with ``repr`` so every value round-trips exactly.
"""

from __future__ import annotations

import csv
import datetime as _dt
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_matrix_csv(path, header, matrix) -> Path:
    """Write a 2-d float array; faster than :func:`write_csv` for big arrays."""
    path = Path(path)
    matrix = np.asarray(matrix)
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in matrix.tolist():
            fh.write(",".join(map(repr, row)) + "\n")
    return path


def read_matrix_csv(path):
    """Return ``(header, float matrix)`` from a headed numeric CSV."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigurationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_metrics(path, metrics) -> Path:
    """Line-oriented ``metric,value`` report."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("metric,value\n")
        for k, v in metrics.items():
            fh.write(f"{k},{fmt(v) if isinstance(v, (int, float, np.number)) else v}\n")
    return path


def now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, entries) -> Path:
    """``key=value`` lines; values must not contain newlines."""
    path = Path(path)
    with path.open("w") as fh:
        for k, v in entries.items():
            text = str(v)
            if "\n" in text:
                raise ConfigurationError(f"manifest value for {k} spans lines")
            fh.write(f"{k}={text}\n")
    return path


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}: malformed manifest line {line!r}")
        out[key] = value
    return out
