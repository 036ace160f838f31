"""
Length-prefixed request/response framing for out-of-process model clients.

Byte layout of one frame (all integers big-endian unsigned 32-bit):

    +----------------+----------------+--------------------+------------------+
    | payload_len    | header_len     | header (UTF-8 JSON)| array blobs      |
    | 4 bytes        | 4 bytes        | header_len bytes   | remaining bytes  |
    +----------------+----------------+--------------------+------------------+

``payload_len`` counts everything after itself. The header is a JSON object;
its ``arrays`` entry lists ``{"name", "dtype", "shape", "offset", "nbytes"}``
for each blob, where ``dtype`` is a numpy little-endian type string
(``"<f8"``, ``"|b1"``, ...) and ``offset`` is relative to the blob section.
Requests carry ``method`` and ``params``; responses carry ``ok`` and either
``result`` or ``error``. The same frames work over pipes or socket files.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from ..errors import ProtocolError

_U32 = struct.Struct(">I")
MAX_FRAME = 1 << 31


def encode_message(header: dict, arrays: dict[str, np.ndarray] | None = None) -> bytes:
    arrays = arrays or {}
    table = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps({**header, "arrays": table}, sort_keys=True).encode("utf-8")
    body = _U32.pack(len(head)) + head + b"".join(blobs)
    if len(body) >= MAX_FRAME:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds limit")
    return _U32.pack(len(body)) + body


def decode_message(frame: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Decode one frame (including its leading length field)."""
    if len(frame) < 8:
        raise ProtocolError("frame shorter than its length fields")
    (payload_len,) = _U32.unpack_from(frame, 0)
    if payload_len != len(frame) - 4:
        raise ProtocolError(f"payload length {payload_len} does not match frame size {len(frame) - 4}")
    (head_len,) = _U32.unpack_from(frame, 4)
    if 8 + head_len > len(frame):
        raise ProtocolError("header runs past end of frame")
    try:
        header = json.loads(frame[8 : 8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad frame header: {exc}") from exc
    blob = memoryview(frame)[8 + head_len :]
    arrays = {}
    for entry in header.pop("arrays", []):
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise ProtocolError(f"array {entry['name']!r} runs past end of frame")
        arr = np.frombuffer(blob[start : start + n], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, arrays


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise ProtocolError(f"stream closed with {remaining} of {n} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> bytes | None:
    """Read one frame; None on clean EOF before any byte."""
    first = stream.read(4)
    if not first:
        return None
    if len(first) < 4:
        first += _read_exact(stream, 4 - len(first))
    (n,) = _U32.unpack(first)
    return first + _read_exact(stream, n)


def write_frame(stream: BinaryIO, frame: bytes) -> None:
    stream.write(frame)
    stream.flush()
