"""CSV and JSON file formats.

Raw matrices are written without a header. Datasets carry a one-line
header ``f0,...,f{d-1}`` with an optional trailing ``label`` column.
Floats are written with ``repr`` precision so a round trip is exact.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import InvalidInputError
from .geometry import Dataset

_FMT = "%.17g"


def write_matrix(path, M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    np.savetxt(path, M, delimiter=",", fmt=_FMT)


def read_matrix(path):
    try:
        M = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: not a numeric CSV matrix ({exc})") from None
    return M


def write_dataset(path, data):
    d = data.dim
    header = [f"f{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if data.labels is not None:
            header.append("label")
        w.writerow(header)
        for i in range(data.n):
            row = [_FMT % v for v in data.points[i]]
            if data.labels is not None:
                row.append(str(data.labels[i]))
            w.writerow(row)


def read_dataset(path):
    """Read a dataset CSV; a headerless numeric file is accepted as features only."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = rows[0]
    if all(_is_number(c) for c in header):
        header, body = None, rows
    else:
        body = rows[1:]
    has_label = header is not None and header[-1] == "label"
    n_feat = (len(header) - has_label) if header else len(body[0])
    pts = np.empty((len(body), n_feat))
    labels = [] if has_label else None
    for i, r in enumerate(body):
        if len(r) != n_feat + has_label:
            raise InvalidInputError(f"{path}: row {i + 1} has {len(r)} fields, expected {n_feat + has_label}")
        try:
            pts[i] = [float(v) for v in r[:n_feat]]
        except ValueError:
            raise InvalidInputError(f"{path}: row {i + 1} has a non-numeric feature") from None
        if has_label:
            labels.append(r[-1])
    if has_label:
        labels = np.array([int(v) for v in labels]) if all(_is_int(v) for v in labels) else np.array(labels)
    return Dataset(pts, labels)


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _is_int(s):
    try:
        int(s)
        return True
    except ValueError:
        return False


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
