"""File formats: JSON helpers and the torsion solution binary."""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .grid import Grid

SOLUTION_MAGIC = b"ANISOSOL"


def to_plain(obj):
    """Recursively convert numpy scalars/arrays to Python types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(to_plain(obj), sort_keys=True, indent=2) + "\n"


def load_json(ref, base: Path | None = None):
    """A JSON document given inline (dict/list) or as a path, relative to ``base`` if given."""
    if isinstance(ref, (dict, list)):
        return ref
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_solution(path, grid: Grid, values: np.ndarray, meta: dict | None = None) -> dict:
    """Write a node field as magic, header length, JSON header and little-endian binary64 data.

    The header records ``shape``, ``spacing``, ``origin`` and ``dtype`` plus
    anything passed in ``meta``.
    """
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    header = dict(to_plain(meta or {}))
    header.update({"shape": list(grid.shape), "spacing": grid.spacing,
                   "origin": list(grid.origin), "dtype": "<f8", "order": "C"})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SOLUTION_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(values.tobytes(order="C"))
    return header


def read_solution(path):
    """Inverse of ``write_solution``: returns ``(header, grid, values)``."""
    with open(path, "rb") as fh:
        if fh.read(len(SOLUTION_MAGIC)) != SOLUTION_MAGIC:
            raise ValueError(f"{path} is not a solution file")
        (length,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(length).decode("utf-8"))
        data = fh.read()
    shape = tuple(int(s) for s in header["shape"])
    values = np.frombuffer(data, dtype="<f8")
    if values.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {values.size}")
    grid = Grid(tuple(float(o) for o in header["origin"]), float(header["spacing"]), shape)
    return header, grid, values.reshape(shape).copy()
