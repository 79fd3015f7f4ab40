"""Atomic artifact writes and the CSV/JSON conventions shared by all stages."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import MissingArtifactError

FLOAT_FMT = ".12g"


def fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if v == 0.0:
            return "0"  # folds -0.0 so reruns stay byte-identical
        return format(v, FLOAT_FMT)
    return str(v)


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_cell(v) for v in row])
    return atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def write_matrix_csv(path, index_name, index, columns, matrix) -> Path:
    """Rows of ``matrix`` keyed by ``index``; ``columns`` name the matrix columns."""
    matrix = np.asarray(matrix)
    rows = ([i, *r] for i, r in zip(index, matrix))
    return write_csv(path, [index_name, *map(str, columns)], rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return float(fmt_cell(v))
    return obj


def write_json(path, obj) -> Path:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    return atomic_write_bytes(path, text.encode("utf-8"))


def require(out_dir, *names) -> list[Path]:
    paths = []
    for name in names:
        p = Path(out_dir) / name
        if not p.is_file():
            raise MissingArtifactError(f"missing upstream: {name}")
        paths.append(p)
    return paths


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_csv(path):
    """Header and string rows of a CSV file."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def _num(cell):
    return float(cell) if cell != "" else np.nan


def read_matrix_csv(path):
    """``(index, columns, matrix)`` for a file written by :func:`write_matrix_csv`."""
    header, rows = read_csv(path)
    index = np.array([int(r[0]) for r in rows], dtype=int)
    mat = np.array([[_num(c) for c in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    return index, header[1:], mat


def read_columns(path) -> dict[str, list[str]]:
    header, rows = read_csv(path)
    return {h: [r[i] for r in rows] for i, h in enumerate(header)}


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
