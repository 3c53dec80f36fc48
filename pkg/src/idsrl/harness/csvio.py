"""CSV files with a ``#schema=<name>/v<k>`` first line and a fixed column order."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class CsvFormatError(ValueError):
    pass


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # round-trips exactly
    if isinstance(v, np.integer):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, schema: str, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"#schema={schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
    return path


def read_csv(path):
    """Return ``(schema, columns, rows)``; rows are dicts of strings."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if not first.startswith("#schema="):
            raise CsvFormatError(f"{path}: missing '#schema=' header line")
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: missing column header") from None
        rows = []
        for lineno, rec in enumerate(reader, start=3):
            if len(rec) != len(columns):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(rec)}")
            rows.append(dict(zip(columns, rec)))
    return first[len("#schema="):], columns, rows
