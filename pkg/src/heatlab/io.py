"""Artifact writers: CSV with 17 significant digits, JSON, atomic replacement."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    if v is None:
        return ""
    return str(v)


def atomic_write_text(path, text):
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    text = Path(path).read_text().strip().splitlines()
    header = text[0].split(",")
    return header, [line.split(",") for line in text[1:]]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path, obj):
    return atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _stride(n_rows, max_rows):
    if max_rows is None or n_rows <= max_rows:
        return 1
    return int(math.ceil(n_rows / max_rows))


def write_field_csv(path, times, x, values, max_times=None):
    """Long-format (t, x, value) table; keeps the last time row when striding."""
    values = np.asarray(values)
    step = _stride(len(times), max_times)
    idx = list(range(0, len(times), step))
    if idx[-1] != len(times) - 1:
        idx.append(len(times) - 1)
    rows = [(times[k], xi, values[k, i]) for k in idx for i, xi in enumerate(x)]
    return write_csv(path, ("t", "x", "value"), rows)


def write_norms_csv(path, times, norms):
    rows = zip(times, norms["l1"], norms["l2"], norms["linf"])
    return write_csv(path, ("t", "l1", "l2", "linf"), rows)


def write_control_csv(path, step_times, x, control, max_times=None):
    """Per-step control as (t, x, h); ``t`` is the left end of each step."""
    control = np.asarray(control)
    step = _stride(len(step_times), max_times)
    rows = [(step_times[k], xi, control[k, i])
            for k in range(0, len(step_times), step) for i, xi in enumerate(x)]
    return write_csv(path, ("t", "x", "h"), rows)
