"""Portable matrix files.

Layout, all little-endian: magic ``b"SELM"``, version u32, rows u64, cols u64,
then ``rows * cols`` row-major IEEE-754 values. Version 1 stores single
precision; version 2 stores double precision and is used for checkpoints,
where reloads must be bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SELM"
HEADER = struct.Struct("<4sIQQ")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
MAX_ELEMENTS = 1 << 34


class MatrixFormatError(ValueError):
    pass


def encode_matrix(matrix, version=1) -> bytes:
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if version not in _DTYPES:
        raise ValueError(f"unsupported version {version}")
    rows, cols = arr.shape
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[version]).tobytes()
    return HEADER.pack(MAGIC, version, rows, cols) + payload


def decode_matrix(blob: bytes) -> np.ndarray:
    if len(blob) < HEADER.size:
        raise MatrixFormatError("truncated header")
    magic, version, rows, cols = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}")
    if version not in _DTYPES:
        raise MatrixFormatError(f"unsupported version {version}")
    if rows * cols > MAX_ELEMENTS or (cols and rows > MAX_ELEMENTS // max(cols, 1)):
        raise MatrixFormatError(f"dimension overflow: {rows} x {cols}")
    dtype = _DTYPES[version]
    expected = rows * cols * dtype.itemsize
    payload = blob[HEADER.size:]
    if len(payload) != expected:
        raise MatrixFormatError(f"truncated payload: expected {expected} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).astype(np.float64)


def write_matrix(path, matrix, version=1):
    Path(path).write_bytes(encode_matrix(matrix, version))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())
