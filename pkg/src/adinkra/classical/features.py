"""Binary feature files.

Layout (little-endian)::

    b"ADNF" | u16 version | u32 rows | u32 dim | u32 num_classes
            | rows x int32 labels | rows*dim float32 values (row-major)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import InputError
from .base import FeatureMatrix

MAGIC = b"ADNF"
VERSION = 1
_HEADER = struct.Struct("<HIII")


def encode_features(fm: FeatureMatrix) -> bytes:
    return b"".join([
        MAGIC, _HEADER.pack(VERSION, fm.rows, fm.dim, fm.num_classes),
        fm.labels.astype("<i4").tobytes(),
        np.ascontiguousarray(fm.values, dtype="<f4").tobytes(),
    ])


def write_features(fm: FeatureMatrix, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_features(fm))
    os.replace(tmp, path)
    return path


def decode_features(blob: bytes) -> FeatureMatrix:
    if len(blob) < 4 + _HEADER.size or blob[:4] != MAGIC:
        raise InputError("not an ADNF feature file")
    version, rows, dim, n_cls = _HEADER.unpack_from(blob, 4)
    if version != VERSION:
        raise InputError(f"feature file version {version}, expected {VERSION}")
    pos = 4 + _HEADER.size
    need = pos + 4 * rows + 4 * rows * dim
    if len(blob) != need:
        raise InputError(f"feature file holds {len(blob)} bytes, header implies {need}")
    labels = np.frombuffer(blob, "<i4", rows, pos).astype(np.int64)
    values = np.frombuffer(blob, "<f4", rows * dim, pos + 4 * rows).reshape(rows, dim)
    return FeatureMatrix(values.astype(np.float32), labels, n_cls)


def read_features(path) -> FeatureMatrix:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read feature file {path}: {exc}") from exc
    return decode_features(blob)
