"""Binary checkpoint format.

    magic   b"MGCAP1"
    record* u32 name_len | name (UTF-8) | u8 dtype tag (1 = f32) | u32 rank |
            u32 dims[rank] | little-endian payload
    u32     CRC32 of every preceding byte

All integers are little-endian.  Records are written in sorted name order.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MGCAP1"
DTYPE_F32 = 1


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BI", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < len(MAGIC) + 4 or not buf.startswith(MAGIC):
        raise CheckpointError("not an MGCAP1 checkpoint")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    out = {}
    pos = len(MAGIC)
    try:
        while pos < len(body):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            tag, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            if tag != DTYPE_F32:
                raise CheckpointError(f"{name}: unknown dtype tag {tag}")
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(body):
                raise CheckpointError(f"{name}: payload truncated")
            out[name] = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError("checkpoint truncated") from exc
    return out


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode_checkpoint(tensors))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    return {k: v.astype(np.float64) for k, v in decode_checkpoint(path.read_bytes()).items()}


def check_shapes(tensors: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise CheckpointError(f"{name}: shape {tensors[name].shape} != {shape}")
