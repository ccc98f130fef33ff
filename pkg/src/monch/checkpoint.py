"""Binary checkpoint container: a named float32 tensor table plus a config
snapshot.

Layout (little-endian): magic "MNCH", u32 version=1, u32 config length +
UTF-8 config JSON, u32 tensor count, then per tensor: u16 name length +
UTF-8 name, u8 rank, rank x u32 extents, row-major float32 data. The config
JSON is stored canonically, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"MNCH"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path: str, config_json: str, tensors: "OrderedDict[str, np.ndarray]") -> None:
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", VERSION)
    cfg = config_json.encode("utf-8")
    payload += struct.pack("<I", len(cfg))
    payload += cfg
    payload += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointFormatError(f"tensor name too long: {name}")
        if arr.ndim > 0xFF:
            raise CheckpointFormatError(f"tensor rank too large: {name}")
        payload += struct.pack("<H", len(nb))
        payload += nb
        payload += struct.pack("<B", arr.ndim)
        for extent in arr.shape:
            payload += struct.pack("<I", extent)
        payload += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(payload))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"checkpoint truncated while reading {what}")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path: str) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    """Returns (config JSON string, ordered name -> float32 array table)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic bytes; not a checkpoint file")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    cfg_len = r.u32("config length")
    config_json = r.take(cfg_len, "config snapshot").decode("utf-8")
    count = r.u32("tensor count")
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for i in range(count):
        try:
            name_len = r.u16(f"tensor {i} name length")
            name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        except CheckpointFormatError:
            raise CheckpointFormatError(
                f"checkpoint truncated: tensor table ends after {i} of {count} tensors"
            )
        rank = r.u8(f"tensor '{name}' rank")
        shape = tuple(r.u32(f"tensor '{name}' extent {d}") for d in range(rank))
        numel = int(np.prod(shape)) if shape else 1
        data = r.take(4 * numel, f"tensor '{name}' data")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    if r.pos != len(blob):
        raise CheckpointFormatError("trailing bytes after tensor table")
    return config_json, tensors
