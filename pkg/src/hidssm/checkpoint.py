"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    offset 0   8 bytes   magic ``b"HIDSSMCK"``
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    length L of the config JSON
    offset 16  L bytes   UTF-8 JSON: layer-stack config + min_segment_len
    then, uint32 parameter count, followed per parameter by:
        uint16            name length K
        K bytes           UTF-8 parameter name
        uint8             rank R
        R x uint32        dimension sizes
        8 * prod(dims)    float64 values, little-endian, C order

Parameters are written in the model's canonical naming order, so identical
models serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .errors import DataError
from .model import HidSsmModel, LayerStackConfig, init_model

MAGIC = b"HIDSSMCK"
VERSION = 1


def save_checkpoint(model: HidSsmModel, path) -> None:
    cfg = dict(asdict(model.cfg), min_segment_len=model.min_segment_len)
    cfg_bytes = json.dumps(cfg, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg_bytes)), cfg_bytes]
    params = model.parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        name_bytes = name.encode("utf-8")
        value = np.asarray(tensor.value, dtype="<f8")  # tobytes() emits C order
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError("truncated checkpoint file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> HidSsmModel:
    try:
        with open(path, "rb") as fh:
            reader = _Reader(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    if reader.take(8) != MAGIC:
        raise DataError("bad checkpoint magic")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (cfg_len,) = reader.unpack("<I")
    try:
        cfg_dict = json.loads(reader.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"bad checkpoint config: {exc}") from exc
    min_segment_len = cfg_dict.pop("min_segment_len", 3)
    try:
        cfg = LayerStackConfig(**cfg_dict)
    except TypeError as exc:
        raise DataError(f"bad checkpoint config fields: {exc}") from exc

    model = init_model(cfg, seed=0)
    model.min_segment_len = int(min_segment_len)
    params = model.parameters()
    (count,) = reader.unpack("<I")
    if count != len(params):
        raise DataError(f"checkpoint has {count} parameters, model expects {len(params)}")
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(8 * size)
        if name not in params:
            raise DataError(f"unknown parameter {name!r} in checkpoint")
        value = np.frombuffer(raw, dtype="<f8").reshape(shape)
        if value.shape != params[name].value.shape:
            raise DataError(
                f"parameter {name!r} has shape {value.shape}, expected {params[name].value.shape}"
            )
        params[name].value = value.astype(np.float64).copy()
    if reader.pos != len(reader.data):
        raise DataError("trailing bytes after checkpoint payload")
    return model
