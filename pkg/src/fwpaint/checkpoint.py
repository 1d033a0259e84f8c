"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"FPA1"
    u32 length, UTF-8 JSON metadata (sorted keys)
    repeated until EOF:
        u16 name length, UTF-8 name
        u8 dtype tag (0 float32, 1 float64, 2 int64)
        u8 ndim, u32 dims[ndim]
        raw little-endian payload, row-major

Records are written in sorted name order, so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FPA1"
FORMAT_VERSION = 1
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        meta = dict(self.meta)
        meta.setdefault("format_version", FORMAT_VERSION)
        text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", len(text)))
        buf.write(text)
        for name in sorted(self.tensors):
            arr = np.asarray(self.tensors[name])
            tag = _TAG_OF.get(arr.dtype)
            if tag is None:
                raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<BB", tag, arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype=_TAGS[tag]).tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise CheckpointError("not a checkpoint: bad magic bytes")
        view = memoryview(blob)
        pos = 4

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(blob):
                raise CheckpointError("truncated checkpoint")
            out = view[pos:pos + n]
            pos += n
            return out

        (length,) = struct.unpack("<I", take(4))
        meta = json.loads(bytes(take(length)).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
        tensors: dict[str, np.ndarray] = {}
        while pos < len(blob):
            (nlen,) = struct.unpack("<H", take(2))
            name = bytes(take(nlen)).decode("utf-8")
            tag, ndim = struct.unpack("<BB", take(2))
            if tag not in _TAGS:
                raise CheckpointError(f"tensor {name!r}: unknown dtype tag {tag}")
            dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
            dt = _TAGS[tag]
            count = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(take(count * dt.itemsize), dtype=dt).reshape(dims)
            tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
        return cls(meta, tensors)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes())

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}
