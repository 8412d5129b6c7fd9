"""Deterministic CSV and JSON emission for the CLI subcommands.

Reruns with identical configs must produce byte-identical files, so
every float goes through one fixed format, rows keep caller order, line
endings are pinned to "\n" regardless of platform, and JSON keys are
sorted. Nothing here writes wall-clock times.
"""

from __future__ import annotations

import csv
import json

import numpy as np

__all__ = ["format_float", "write_rows", "write_summary"]

FLOAT_FMT = "%.12g"


def format_float(value) -> str:
    return FLOAT_FMT % float(value)


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_rows(path, header, rows) -> None:
    """Write one CSV file with a header row and formatted body rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if np.isnan(value) else value
    return value


def write_summary(path, mapping) -> None:
    """Write the run summary as stable, sorted, indented JSON."""
    with open(path, "w") as fh:
        json.dump(_jsonable(mapping), fh, sort_keys=True, indent=2)
        fh.write("\n")
