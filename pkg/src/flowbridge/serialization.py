"""Binary container shared by checkpoints and synthetic worlds.

Layout (all integers unsigned 32-bit little-endian)::

    b"VBRG" | version | len(meta) | meta (UTF-8 JSON) | n_tensors |
    n_tensors x ( len(name) | name (UTF-8) | rank | extents... | float32 LE values )
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"VBRG"
VERSION = 1
_U32 = struct.Struct("<I")


def _write_u32(f: BinaryIO, n: int) -> None:
    f.write(_U32.pack(n))


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def _read_u32(f: BinaryIO) -> int:
    return _U32.unpack(_read_exact(f, 4))[0]


def write_container(f: BinaryIO, metadata: dict, tensors: dict[str, np.ndarray]) -> None:
    f.write(MAGIC)
    _write_u32(f, VERSION)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    _write_u32(f, len(meta))
    f.write(meta)
    _write_u32(f, len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        _write_u32(f, len(raw))
        f.write(raw)
        _write_u32(f, arr.ndim)
        for n in arr.shape:
            _write_u32(f, n)
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_container(f: BinaryIO) -> tuple[dict, dict[str, np.ndarray]]:
    magic = f.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = _read_u32(f)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version} (this build reads version {VERSION})")
    try:
        metadata = json.loads(_read_exact(f, _read_u32(f)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt metadata: {exc}") from None
    tensors: dict[str, np.ndarray] = {}
    for _ in range(_read_u32(f)):
        name = _read_exact(f, _read_u32(f)).decode("utf-8")
        shape = tuple(_read_u32(f) for _ in range(_read_u32(f)))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4")
        tensors[name] = data.astype(np.float32).reshape(shape)
    if f.read(1):
        raise FormatError("trailing bytes after tensor table")
    return metadata, tensors


def dumps(metadata: dict, tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    write_container(buf, metadata, tensors)
    return buf.getvalue()


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    return read_container(io.BytesIO(blob))


def save(path: str | Path, metadata: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        write_container(f, metadata, tensors)
    tmp.replace(path)


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        return read_container(f)
