"""Binary checkpoint format.

Layout (little-endian): magic ``b"FPCI"``, u32 version, u32 tensor count,
then per tensor u32 name length, UTF-8 name, u32 ndims, u32 dims[ndims],
float32 data; a trailing u32 CRC32 covers every byte before it.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"FPCI"
VERSION = 1


def encode(state):
    """Serialize an ordered ``{name: array}`` mapping to bytes."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, value in state.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode(blob, path=None):
    def fail(msg, offset):
        raise FormatError(msg, path=path, location=f"byte {offset}")

    if len(blob) < 16:
        fail("file too short for a checkpoint", len(blob))
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        fail("CRC mismatch, checkpoint is corrupted", len(blob) - 4)
    if payload[:4] != MAGIC:
        fail(f"bad magic {payload[:4]!r}", 0)
    version, count = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        fail(f"unsupported version {version}", 4)
    pos = 12
    state = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            name = payload[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", payload, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(payload):
                fail(f"tensor {name!r} runs past the end of the file", pos)
            state[name] = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, UnicodeDecodeError):
        fail("truncated or malformed entry", pos)
    if pos != len(payload):
        fail("trailing bytes after the last tensor", pos)
    return state


def save(path, state):
    Path(path).write_bytes(encode(state))


def load(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint: {exc.strerror}", path=str(path)) from None
    return decode(blob, str(path))
