"""Checkpoint archive: named parameter tensors with a config header.

Layout (all integers little-endian):
  magic "TSCK", format version uint32, header-JSON length uint32, header JSON
  (model config fields), tensor count uint32, then per tensor: name length +
  utf-8 name, dtype code uint8 (4 or 8 bytes per scalar), ndim uint32, dims
  uint64 each, raw little-endian payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .tensor import Tensor
from .vit import ModelConfig, ViT

MAGIC = b"TSCK"
FORMAT_VERSION = 1

_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def save(model: ViT, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        header = json.dumps(asdict(model.config), sort_keys=True).encode()
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(model.params)))
        for name, p in model.params.items():
            blob = name.encode()
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            code = p.data.dtype.itemsize
            fh.write(struct.pack("<BI", code, p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype=_DTYPE_CODES[code]).tobytes())


def load(path) -> ViT:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint archive")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        config = ModelConfig(**json.loads(fh.read(header_len)))
        model = ViT(config, seed=0)
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            code, ndim = struct.unpack("<BI", fh.read(5))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            dtype = _DTYPE_CODES[code]
            payload = fh.read(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
            arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
            if name not in model.params:
                raise ValueError(f"checkpoint holds unknown parameter {name!r}")
            model.params[name] = Tensor(arr, requires_grad=True)
    return model
