"""Small deterministic CSV helpers shared by the data types."""

import csv
import io

import numpy as np

from .errors import ConfigError


def fmt(x):
    """Shortest round-trip representation of a float."""
    x = float(x)
    if x == 0.0:
        return "0.0"
    return repr(x)


def dumps(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def loads(text, expected=None):
    """Parse CSV text into ``(header, array)``.

    ``expected`` optionally checks the header.  Malformed numbers raise
    :class:`ConfigError` naming the line.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ConfigError("empty CSV") from None
    if expected is not None and header != list(expected):
        raise ConfigError(f"unexpected CSV header {header}, expected {list(expected)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ConfigError(f"CSV line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            raise ConfigError(f"CSV line {lineno}: non-numeric field") from None
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
