"""File formats and atomic writes.

Matrix files: a 16-byte little-endian header ``<4sIII`` holding the magic
``TLMX``, a dtype code (1 = float64), rows and cols, followed by the
row-major float64 payload.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"TLMX"
_HEADER = struct.Struct("<4sIII")
_DTYPES = {1: "<f8"}


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_matrix(path, M):
    M = np.asarray(M, dtype="<f8")
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValueError("only 1-D or 2-D arrays can be stored")
    header = _HEADER.pack(MAGIC, 1, M.shape[0], M.shape[1])
    atomic_write_bytes(path, header + np.ascontiguousarray(M).tobytes())


def read_matrix(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated matrix file")
    magic, code, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC or code not in _DTYPES:
        raise ValueError(f"{path}: not a matrix file")
    dt = np.dtype(_DTYPES[code])
    expected = _HEADER.size + rows * cols * dt.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: payload size {len(raw)} != {expected}")
    return np.frombuffer(raw, dtype=dt, offset=_HEADER.size).reshape(rows, cols).astype(float)


def write_matrix_csv(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [",".join(repr(float(x)) for x in row) for row in M]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_columns_csv(path, columns: dict):
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = len(arrays[0]) if arrays else 0
    lines = [",".join(names)]
    for i in range(n):
        lines.append(",".join(_fmt(a[i]) for a in arrays))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def sha256_file(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            b = fh.read(chunk)
            if not b:
                break
            h.update(b)
    return h.hexdigest()


def sha256_json(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()
