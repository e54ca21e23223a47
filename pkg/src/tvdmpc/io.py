"""Atomic file output and the on-disk formats of the command-line tool."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ReportError

TRAJECTORY_FORMAT_VERSION = 1


def atomic_write_text(path, text):
    """Write ``text`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(doc):
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def write_json(path, doc):
    atomic_write_text(path, dumps_json(doc))


def read_json(path, kind=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ReportError(f"{path}: missing format_version")
    if doc["format_version"] != 1:
        raise ReportError(f"{path}: unsupported format_version {doc['format_version']!r}")
    if kind is not None and doc.get("kind") != kind:
        raise ReportError(f"{path}: expected a {kind} document, found {doc.get('kind')!r}")
    return doc


def _num(v):
    return repr(float(v))


def csv_text(header, rows, comment=None):
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def trajectory_csv(record, state_con):
    """One row per realized state ``x_0 .. x_T`` with the input applied there."""
    n_x = record.states.shape[1]
    n_u = record.inputs.shape[1] if record.inputs.ndim == 2 else 1
    n_d = record.disturbances.shape[1] if record.disturbances.ndim == 2 else 1
    header = (["step"] + [f"x_{i + 1}" for i in range(n_x)] + [f"u_{i + 1}" for i in range(n_u)]
              + [f"delta_{i + 1}" for i in range(n_d)] + ["violation", "status"])
    rows = []
    T = record.states.shape[0]
    for k in range(T):
        x = record.states[k]
        if k < record.inputs.shape[0]:
            u = [_num(v) for v in record.inputs[k]]
            d = [_num(v) for v in record.disturbances[k]]
        else:
            u = [""] * n_u
            d = [""] * n_d
        status = record.statuses[k] if k < len(record.statuses) else ""
        viol = int(not state_con.contains(x, tol=1e-9))
        rows.append([k] + [_num(v) for v in x] + u + d + [viol, status])
    return csv_text(header, rows, comment=f"format_version={TRAJECTORY_FORMAT_VERSION}")


def read_trajectory(path):
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise ReportError(f"cannot read trajectory {path}: {exc.strerror}") from None
    reader = csv.DictReader(lines)
    rows = list(reader)
    states = [[float(r[c]) for c in reader.fieldnames if c.startswith("x_")] for r in rows]
    return np.array(states), reader.fieldnames
