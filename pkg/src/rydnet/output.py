"""CSV emitters.  Every file starts with ``#``-prefixed provenance lines."""

from __future__ import annotations

import csv
import datetime as _dt
import json
from pathlib import Path

import numpy as np

from . import __version__

__all__ = ["header_lines", "write_csv", "state_rows", "format_bits"]


def header_lines(config: dict | None, reproducible: bool, notes=()) -> list[str]:
    lines = [f"rydnet {__version__}"]
    if config is not None:
        lines.append("config: " + json.dumps(config, sort_keys=True, default=str))
    lines.extend(notes)
    if not reproducible:
        lines.append("generated: " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    return lines


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return "" if value is None else str(value)


def write_csv(path, columns, rows, header=()) -> Path:
    """Write ``rows`` under ``columns`` with each ``header`` line as a comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def format_bits(config) -> str:
    """Occupancy as a ``0``/``1`` string, particle 1 first."""
    return "".join(str(int(s)) for s in config)


def state_rows(space, indices=None):
    """``(state_index, occupancy_bits, n_excited)`` rows."""
    if indices is None:
        indices = range(len(space))
    for k in indices:
        yield k, format_bits(space.config(k)), int(space.n_excited[k])
