"""On-disk formats for timelines, map matrices and summaries.

Map files are little-endian: the magic ``RPPGMAP1``, uint32 height, uint32
width, uint16 name length, the UTF-8 metric name, then height*width float64
values in row-major order. Absent cells are NaN.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

MAP_MAGIC = b"RPPGMAP1"
TIMELINE_COLUMNS = ("t_start", "f_hr", "bpm", "snr_db", "magnitude", "pi", "rho_ref")


def write_map(path, matrix: np.ndarray, name: str) -> Path:
    path = Path(path)
    matrix = np.asarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise InputError("map matrix must be 2-D")
    encoded = name.encode("utf-8")
    header = MAP_MAGIC + struct.pack("<IIH", matrix.shape[0], matrix.shape[1], len(encoded)) + encoded
    path.write_bytes(header + np.ascontiguousarray(matrix).tobytes())
    return path


def read_map(path) -> tuple[np.ndarray, str]:
    data = Path(path).read_bytes()
    if data[:8] != MAP_MAGIC:
        raise InputError(f"{path} is not a map file")
    h, w, n = struct.unpack("<IIH", data[8:18])
    name = data[18 : 18 + n].decode("utf-8")
    body = data[18 + n :]
    if len(body) != h * w * 8:
        raise InputError(f"{path}: expected {h * w} values, got {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(h, w).copy(), name


def _fmt(value) -> str:
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return ""
    return f"{value:.12g}"


def write_timeline_csv(path, entries) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TIMELINE_COLUMNS)
        for e in entries:
            writer.writerow([_fmt(getattr(e, col)) for col in TIMELINE_COLUMNS])
    return path


def read_timeline_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in rows]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) or math.isinf(f) else f
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
