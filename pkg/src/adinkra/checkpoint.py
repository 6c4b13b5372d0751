"""Versioned binary checkpoints.

Layout (little-endian)::

    b"ADNK" | u16 version | u32 header_len | header (UTF-8 JSON: spec, seed, history)
            | u64 payload_len | payload (float32 parameters, declaration order)
            | u32 CRC32(payload)
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .core.tensor import ParamTensor
from .errors import (CheckpointChecksumError, CheckpointFormatError, CheckpointTruncatedError,
                     CheckpointVersionError, InputError)
from .model import ModelSpec, ModelState, parameter_shapes
from .training import TrainHistory

MAGIC = b"ADNK"
VERSION = 1


def _state_only(history: TrainHistory) -> dict:
    # wall time and memory are measurements, not training state; leaving them
    # out lets identical training runs produce byte-identical checkpoints
    d = history.to_dict()
    for r in d["records"]:
        r["seconds"], r["peak_mem"] = 0.0, 0
    return d


def encode_checkpoint(model: ModelState, history: TrainHistory | None = None) -> bytes:
    header = json.dumps({
        "spec": model.spec.to_dict(),
        "seed": model.rng_seed,
        "history": _state_only(history or TrainHistory()),
    }, sort_keys=True).encode("utf-8")
    payload = b"".join(p.data.astype("<f4").tobytes() for p in model.parameters)
    return b"".join([
        MAGIC, struct.pack("<HI", VERSION, len(header)), header,
        struct.pack("<Q", len(payload)), payload,
        struct.pack("<I", zlib.crc32(payload)),
    ])


def save_checkpoint(model: ModelState, history: TrainHistory | None, path) -> Path:
    """Write atomically: a failed write never leaves a partial checkpoint at ``path``."""
    path = Path(path)
    blob = encode_checkpoint(model, history)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    return path


def decode_checkpoint(blob: bytes, dtype=np.float32) -> tuple[ModelState, TrainHistory]:
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CheckpointFormatError("not an ADNK checkpoint")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    pos = 10
    if len(blob) < pos + header_len + 8:
        raise CheckpointTruncatedError("checkpoint truncated inside the header")
    try:
        header = json.loads(blob[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from exc
    pos += header_len
    (payload_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if len(blob) < pos + payload_len + 4:
        raise CheckpointTruncatedError(
            f"checkpoint truncated: expected {payload_len} payload bytes plus checksum")
    payload = blob[pos:pos + payload_len]
    (crc,) = struct.unpack_from("<I", blob, pos + payload_len)
    if zlib.crc32(payload) != crc:
        raise CheckpointChecksumError("checkpoint payload checksum mismatch")

    spec = ModelSpec.from_dict(header["spec"])
    shapes = parameter_shapes(spec)
    expected = 4 * sum(int(np.prod(s)) for _, s in shapes)
    if expected != payload_len:
        raise CheckpointFormatError(f"payload holds {payload_len} bytes, spec needs {expected}")
    flat = np.frombuffer(payload, dtype="<f4")
    params, offset = [], 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        params.append(ParamTensor(flat[offset:offset + n].reshape(shape).astype(dtype), name=name))
        offset += n
    model = ModelState(spec, params, int(header["seed"]))
    return model, TrainHistory.from_dict(header["history"])


def load_checkpoint(path, dtype=np.float32) -> tuple[ModelState, TrainHistory]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(blob, dtype)
