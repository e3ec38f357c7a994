"""Plot-ready CSV output: 17 significant digits, mandatory header, NA for missing."""

import csv
from datetime import datetime, timezone
import io
import math
from pathlib import Path

import numpy as np

MISSING = "NA"


def format_value(v):
    if v is None:
        return MISSING
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return MISSING if not math.isfinite(v) else format(float(v), ".17g")
    return str(v)


def render(header, rows):
    """CSV body (header + rows) as text, without the timestamp comment."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, timestamp=None):
    """Write ``# generated <UTC time>`` followed by the CSV body; returns the path."""
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"# generated {stamp}\n" + render(header, rows))
    return path


def read_body(path):
    """File contents without leading comment lines (for reproducibility checks)."""
    lines = Path(path).read_text().splitlines(keepends=True)
    return "".join(line for line in lines if not line.startswith("#"))
