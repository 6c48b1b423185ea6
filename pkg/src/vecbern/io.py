"""File formats: binary field files, CSV export and YAML key-value documents.

A field file is a YAML header terminated by a line ``END_HEADER`` followed by
raw little-endian float64 samples in row-major node order, the ``k``
components of each node stored contiguously.
"""

from __future__ import annotations

import hashlib
import io as _io
from pathlib import Path

import numpy as np
import yaml

from .fields import Grid, VectorField

MAGIC = "vecbern-field"
FORMAT_VERSION = 1
_END = b"END_HEADER\n"


def field_to_bytes(U: VectorField) -> bytes:
    g = U.grid
    header = {
        "format": MAGIC,
        "version": FORMAT_VERSION,
        "d": g.d,
        "n": [g.n] * g.d,
        "h": g.h,
        "origin": list(g.origin),
        "k": U.k,
        "dtype": "<f8",
        "layout": "row-major nodes, components interleaved",
    }
    text = yaml.safe_dump(header, sort_keys=False).encode()
    data = np.ascontiguousarray(np.moveaxis(U.values, 0, -1), dtype="<f8").tobytes()
    return text + _END + data


def field_from_bytes(blob: bytes) -> VectorField:
    pos = blob.find(_END)
    if pos < 0:
        raise ValueError("field file has no END_HEADER line")
    header = yaml.safe_load(blob[:pos].decode())
    if not isinstance(header, dict) or header.get("format") != MAGIC:
        raise ValueError("not a vecbern field file")
    d = int(header["d"])
    ns = [int(v) for v in np.atleast_1d(header["n"])]
    if len(set(ns)) != 1 or len(ns) != d:
        raise ValueError("field files must have the same node count on every axis")
    grid = Grid(d, ns[0], float(header["h"]), tuple(header["origin"]))
    k = int(header["k"])
    raw = np.frombuffer(blob[pos + len(_END):], dtype="<f8")
    if raw.size != grid.size * k:
        raise ValueError(f"expected {grid.size * k} samples, found {raw.size}")
    vals = np.moveaxis(raw.reshape(grid.shape + (k,)), -1, 0)
    return VectorField(grid, vals.astype(float))


def write_field(path, U: VectorField) -> None:
    Path(path).write_bytes(field_to_bytes(U))


def read_field(path) -> VectorField:
    return field_from_bytes(Path(path).read_bytes())


def field_csv(U: VectorField) -> str:
    """One row per node: coordinates then components."""
    g = U.grid
    cols = [f"x{i + 1}" for i in range(g.d)] + [f"u{i + 1}" for i in range(U.k)]
    table = np.concatenate([g.coords().reshape(g.d, -1), U.values.reshape(U.k, -1)]).T
    buf = _io.StringIO()
    np.savetxt(buf, table, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    return buf.getvalue()


def write_csv(path, U: VectorField) -> None:
    Path(path).write_text(field_csv(U))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dump_doc(doc) -> str:
    return yaml.safe_dump(_plain(doc), sort_keys=False, default_flow_style=None)


def write_doc(path, doc) -> None:
    Path(path).write_text(dump_doc(doc))


def read_doc(path) -> dict:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a key-value document")
    return data


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
