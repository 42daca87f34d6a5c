"""Lossless PNG encode/decode and base64 helpers for frames.

One encoder is used everywhere (batch writer, stream service, wire
client) so identical pixel content always produces identical bytes.
The writer emits unfiltered scanlines with light deflate: on recomposed
frames (mostly flat background) that is several times faster than a
filtered encoder at 720p, which matters for the real-time path.
"""

from __future__ import annotations

import base64
import struct
import zlib
from pathlib import Path

import cv2
import numpy as np

from .core import Frame
from .errors import FormatError

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 1


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload)))


def encode_png(frame: Frame) -> bytes:
    rgb = frame.pixels
    h, w = rgb.shape[:2]
    raw = np.empty((h, w * 3 + 1), np.uint8)
    raw[:, 0] = 0  # filter type None per scanline
    raw[:, 1:] = rgb.reshape(h, -1)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)  # 8-bit RGB
    idat = zlib.compress(raw.tobytes(), _ZLIB_LEVEL)
    return (_PNG_SIGNATURE + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", idat) + _png_chunk(b"IEND", b""))


def decode_png(data: bytes) -> Frame:
    if not data:
        raise FormatError("empty image payload")
    try:
        arr = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_COLOR)
    except cv2.error as e:
        raise FormatError(f"undecodable image payload: {e}") from e
    if arr is None:
        raise FormatError("undecodable image payload")
    return Frame(np.ascontiguousarray(arr[:, :, ::-1]))


def frame_to_base64(frame: Frame) -> str:
    return base64.b64encode(encode_png(frame)).decode("ascii")


def frame_from_base64(text: str) -> Frame:
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as e:
        raise FormatError(f"invalid base64 image: {e}") from e
    return decode_png(raw)


def save_frame(path, frame: Frame) -> None:
    Path(path).write_bytes(encode_png(frame))


def load_frame(path) -> Frame:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"no such image file: {p}")
    return decode_png(p.read_bytes())
