"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255 only."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..errors import MalformedHeader, UnexpectedEof, UnsupportedMaxval

_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos] in _WHITESPACE:
            pos += 1
        if pos < n and buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise UnexpectedEof("file ended inside the header")
        start = pos
        while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= n:
        raise UnexpectedEof("file ended before the pixel data")
    if buf[pos] not in _WHITESPACE:
        raise MalformedHeader("missing whitespace after maxval")
    return tokens, pos + 1


def decode(buf: bytes) -> np.ndarray:
    """Decode PPM/PGM bytes into an ``(H, W, C)`` float64 image in ``[0, 1]``."""
    if len(buf) < 2:
        raise UnexpectedEof("empty file")
    magic = buf[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise MalformedHeader(f"unsupported magic {magic!r}")
    tokens, offset = _header_tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric header field in {tokens!r}") from exc
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"bad image size {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxval(f"maxval {maxval} (only 255 is supported)")
    start = 2 + offset
    need = width * height * channels
    data = buf[start:start + need]
    if len(data) < need:
        raise UnexpectedEof(f"expected {need} pixel bytes, found {len(data)}")
    pix = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return pix.astype(np.float64) / 255.0


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise ValueError(f"PPM/PGM need 1 or 3 channels, got {c}")
    if img.dtype != np.uint8:
        img = to_uint8(img)
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def load_ppm(path: str | os.PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())


def save_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    Path(path).write_bytes(encode(img))
