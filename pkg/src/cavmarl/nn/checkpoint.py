"""Binary parameter container.

Layout (all integers little-endian)::

    magic      8 bytes  b"CAVMCKPT"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON
    count      u32
    count entries: name_len u16, name bytes, ndim u8, ndim x u64 dims
    data       each array in entry order as little-endian float64
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CAVMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> Path:
    path = Path(path)
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode()
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for arr in arrays.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    try:
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
        pos = 16
        meta = json.loads(buf[pos:pos + meta_len].decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        table = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            table.append((name, shape))
        arrays = {}
        for name, shape in table:
            n = int(np.prod(shape))
            arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays, meta
