"""
Binary model checkpoints.

Layout (all integers little-endian):

    magic     4 bytes  b"OMNF"
    version   u32      currently 1
    cfg_len   u32      length of the UTF-8 JSON model config that follows
    cfg       cfg_len bytes
    count     u32      number of tensors
    per tensor, in state-dict order:
        name_len u16, name (UTF-8), ndim u8, dims u32 x ndim
    then the tensor data, concatenated in the same order as float32 values

Parameters are stored as float32 whatever the model dtype, so a float64 model
round-trips to within float32 rounding.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import ProtocolError
from .model import ModelConfig, TinyVelocityModel

MAGIC = b"OMNF"
VERSION = 1


def save_checkpoint(model: TinyVelocityModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    head = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(state))]
    blobs = []
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        dims = tuple(tensor.shape)
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(dims)))
        head.append(struct.pack(f"<{len(dims)}I", *dims))
        blobs.append(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    path.write_bytes(b"".join(head + blobs))
    return path


def load_checkpoint(path) -> TinyVelocityModel:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ProtocolError(f"checkpoint {path} is truncated")
        out = buf[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise ProtocolError(f"{path} is not an omniforge checkpoint")
    version, cfg_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise ProtocolError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig(**json.loads(take(cfg_len).decode("utf-8")))
    (count,) = struct.unpack("<I", take(4))
    table = []
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = take(n).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        table.append((name, dims))
    model = TinyVelocityModel(cfg)
    state = {}
    for name, dims in table:
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        state[name] = torch.from_numpy(arr.astype(np.float64)).to(model.dtype)
    if pos != len(buf):
        raise ProtocolError(f"checkpoint {path} has {len(buf) - pos} trailing bytes")
    model.load_state_dict(state)
    return model
