"""Reading and writing observation matrices, labels and JSON documents."""
import csv
import hashlib
import json
import math

import numpy as np

from .exceptions import InputError

#: enough significant digits for a lossless float64 round trip
FLOAT_FORMAT = "%.17g"


def write_matrix(path, X, header=None):
    """Comma-separated rows with 17 significant digits."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in X:
            fh.write(",".join(FLOAT_FORMAT % v for v in row) + "\n")


def parse_row(line, lineno=None):
    """Floats of one comma-separated line; ``InputError`` on bad fields."""
    try:
        vals = [float(v) for v in line.strip().split(",")]
    except ValueError:
        where = f"row {lineno}: " if lineno is not None else ""
        raise InputError(f"{where}non-numeric field in {line.strip()!r}") from None
    if not all(math.isfinite(v) for v in vals):
        where = f"row {lineno}: " if lineno is not None else ""
        raise InputError(f"{where}non-finite value")
    return vals


def read_matrix(path, header=False):
    """Observation matrix from CSV, rejecting ragged or non-numeric rows."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, fields in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not fields or all(not f.strip() for f in fields):
                continue
            vals = parse_row(",".join(fields), lineno)
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputError(f"row {lineno} has {len(vals)} fields, expected {width}")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def write_labels(path, labels):
    with open(path, "w") as fh:
        for v in labels:
            fh.write(f"{int(v)}\n")


def read_labels(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise InputError(f"row {lineno}: label {line!r} is not an integer") from None
    return np.asarray(out, dtype=int)


def dumps(doc):
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_json(path, doc):
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
