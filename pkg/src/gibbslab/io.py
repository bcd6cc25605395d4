"""Persistence: the binary field container, CSV tables and JSON manifests.

Field container layout (all little-endian)::

    magic    4 bytes   b"GBLF"
    version  uint16
    L        float64   circumference parameter of the torus
    M        uint32    nodes per field
    count    uint64    number of fields
    data     count * M complex128, row-major (one field per row)
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .measures import Ensemble, GffSpec, GibbsSpec
from .spectral import make_grid

MAGIC = b"GBLF"
VERSION = 1
_HEADER = struct.Struct("<4sHdIQ")


def write_fields(path, values: np.ndarray, L: float) -> None:
    values = np.asarray(values, dtype="<c16")
    if values.ndim != 2:
        raise ValueError("fields must be a 2-D array (count, M)")
    count, M = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, float(L), M, count))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_fields(path) -> tuple[np.ndarray, float]:
    """Return ``(values, L)`` from a field container."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, L, M, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a field container")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        data = fh.read()
    if len(data) != 16 * M * count:
        raise ValueError(f"{path}: expected {count} fields of {M} nodes, got {len(data)} bytes")
    values = np.frombuffer(data, dtype="<c16").reshape(count, M).astype(np.complex128)
    return values, L


def save_ensemble(ensemble: Ensemble, path) -> Path:
    """Write the field container and a JSON index next to it (``<path>.json``)."""
    path = Path(path)
    g = ensemble.grid
    write_fields(path, ensemble.values.reshape(len(ensemble), g.n_points), g.L)
    spec = ensemble.spec
    index = {
        "container": path.name,
        "L": g.L,
        "n_points": g.n_points,
        "count": len(ensemble),
        "p": spec.p,
        "strength": spec.strength,
        "variance": spec.gff.variance,
        "provenance": _jsonable(ensemble.provenance),
    }
    idx = path.with_name(path.name + ".json")
    idx.write_text(json.dumps(index, indent=2, sort_keys=True))
    return idx


def load_ensemble(path) -> Ensemble:
    path = Path(path)
    values, L = read_fields(path)
    index = json.loads(path.with_name(path.name + ".json").read_text())
    if index["count"] != len(values) or index["L"] != L:
        raise ValueError("index and container disagree")
    grid = make_grid(L, index["n_points"])
    spec = GibbsSpec(GffSpec(grid, index["variance"]), index["p"], index["strength"])
    return Ensemble(spec, values.reshape(-1, grid.n_points), index.get("provenance", {}))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, header, rows) -> Path:
    """CSV with ``repr`` floats, so equal numbers always give equal bytes."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, [row for row in rd]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))
    return path


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
