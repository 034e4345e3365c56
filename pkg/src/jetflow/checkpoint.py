"""Self-describing binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"JETF"
    version u32
    step    u64
    config  u64 length + UTF-8 canonical run-config text
    count   u32 number of table entries
    entry   u16 name length + name bytes
            u8  dtype code (1=float32, 2=float64, 3=uint8, 4=int64)
            u8  rank, then rank * u64 extents
            u64 payload length + raw little-endian data

The table preserves insertion order, save -> load -> save is
byte-identical, and writes are atomic (temp file + rename).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"JETF"
VERSION = 1

_CODE_FOR_DTYPE = {
    np.dtype(np.float32): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.uint8): 3,
    np.dtype(np.int64): 4,
}
_DTYPE_FOR_CODE = {code: dtype for dtype, code in _CODE_FOR_DTYPE.items()}
_LE = {1: "<f4", 2: "<f8", 3: "u1", 4: "<i8"}


@dataclass
class CheckpointState:
    config_text: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.tensors:
            raise DataFormatError(f"duplicate checkpoint tensor name: {name}")
        self.tensors[name] = array


def _encode_tensor(name: str, array: np.ndarray) -> bytes:
    dtype = np.dtype(array.dtype)
    if dtype not in _CODE_FOR_DTYPE:
        raise DataFormatError(f"checkpoint tensor {name}: unsupported dtype {dtype}")
    code = _CODE_FOR_DTYPE[dtype]
    name_bytes = name.encode("utf-8")
    payload = np.ascontiguousarray(array).astype(_LE[code], copy=False).tobytes()
    head = struct.pack("<H", len(name_bytes)) + name_bytes
    head += struct.pack("<BB", code, array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape) if array.ndim else b""
    head += struct.pack("<Q", len(payload))
    return head + payload


def save_checkpoint(state: CheckpointState, path) -> None:
    """Serialize atomically; the file appears complete or not at all."""
    path = Path(path)
    config_bytes = state.config_text.encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<Q", state.step)
    blob += struct.pack("<Q", len(config_bytes)) + config_bytes
    blob += struct.pack("<I", len(state.tensors))
    for name, array in state.tensors.items():
        blob += _encode_tensor(name, array)
    temp = path.with_name(path.name + ".tmp")
    temp.write_bytes(bytes(blob))
    os.replace(temp, path)


class _Reader:
    def __init__(self, blob: bytes, origin: str):
        self.blob = blob
        self.origin = origin
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise DataFormatError(f"{self.origin}: truncated checkpoint")
        out = self.blob[self.offset : self.offset + count]
        self.offset += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> CheckpointState:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(4) != MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise DataFormatError(
            f"{path}: checkpoint version {version} but this build reads version {VERSION}"
        )
    (step,) = reader.unpack("<Q")
    (config_len,) = reader.unpack("<Q")
    config_text = reader.take(config_len).decode("utf-8")
    (count,) = reader.unpack("<I")
    state = CheckpointState(config_text=config_text, step=step)
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, rank = reader.unpack("<BB")
        if code not in _DTYPE_FOR_CODE:
            raise DataFormatError(f"{path}: tensor {name} has unknown dtype code {code}")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        (nbytes,) = reader.unpack("<Q")
        flat = np.frombuffer(reader.take(nbytes), dtype=_LE[code])
        expected = int(np.prod(shape)) if shape else 1
        if flat.size != expected:
            raise DataFormatError(
                f"{path}: tensor {name} payload holds {flat.size} values, shape needs {expected}"
            )
        state.add(name, flat.reshape(shape).astype(_DTYPE_FOR_CODE[code], copy=False))
    if reader.offset != len(reader.blob):
        raise DataFormatError(f"{path}: {len(reader.blob) - reader.offset} trailing bytes")
    return state
