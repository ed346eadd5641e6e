"""Small helpers for deterministic CSV/JSON output."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        # JSON has no inf/nan literals
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_plain(float(x.real)), _plain(float(x.imag))]
    if isinstance(x, Path):
        return str(x)
    return x


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_matrix_csv(path, matrix, row_values, col_values, row_name="row", col_name="col") -> Path:
    """Matrix with the row axis as the first column and column-axis values in the header."""
    matrix = np.asarray(matrix)
    header = [f"{row_name}\\{col_name}"] + [repr(float(c)) for c in col_values]
    rows = [[float(r)] + [float(v) for v in matrix[i]] for i, r in enumerate(row_values)]
    return write_csv(path, header, rows)
