"""Small file helpers: atomic writes and 17-digit CSV matrices."""

import csv
import io as _io
import json
import os
import tempfile

import numpy as np


def format_float(v):
    """Round-trip-exact decimal representation of a float."""
    return f"{float(v):.17g}"


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv_rows(path, header, rows):
    """Write rows atomically; floats get 17 significant digits."""
    atomic_write_text(path, csv_text(header, rows))


def write_csv_matrix(path, M, header):
    M = np.asarray(M, dtype=float)
    write_csv_rows(path, header, (list(map(float, r)) for r in M))


def read_csv_matrix(path):
    """Read a header plus all-numeric body; returns ``(matrix, header)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    body = np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(header))
    return body, header


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
