"""Binary array container shared by body models, checkpoints and datasets.

Layout (little-endian)::

    magic  b"LPOC"
    u32    format version
    u32    metadata length, then that many bytes of UTF-8 JSON
    u32    array count
    per array:
        u16 name length, name (UTF-8)
        u8  dtype length, numpy dtype string (e.g. "<f8")
        u8  ndim, then ndim x u64 shape
        u64 payload length, raw C-order payload
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LPOC"
VERSION = 1
_ALLOWED = {"<f8", "<f4", "<i8", "<i4", "|u1", "|b1"}


class ContainerError(ValueError):
    pass


def _encode(arr: np.ndarray) -> tuple[str, bytes]:
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    code = dt.str
    if code not in _ALLOWED:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    return code, arr.astype(dt, copy=False).tobytes()


def write_container(path, arrays: dict[str, np.ndarray], metadata: dict | None = None,
                    overwrite: bool = False) -> Path:
    """Write atomically: a temp file is renamed into place once complete."""
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists (use --force to overwrite)")
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code, payload = _encode(arr)
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", len(code)), code.encode(),
                  struct.pack("<B", arr.ndim), struct.pack(f"<{arr.ndim}Q", *arr.shape),
                  struct.pack("<Q", len(payload)), payload]
    tmp = path.with_name(path.name + ".tmp")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(tmp, "wb") as fh:
        for p in parts:
            fh.write(p)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(f"{self.path}: truncated container")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return (arrays, metadata); raises ContainerError on any malformed input."""
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise ContainerError(f"{path}: not a container file (bad magic)")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise ContainerError(f"{path}: container version {version}, expected {VERSION}")
    try:
        metadata = json.loads(r.take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt metadata block") from exc
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (clen,) = r.unpack("<B")
        code = r.take(clen).decode()
        if code not in _ALLOWED:
            raise ContainerError(f"{path}: array {name!r} has unsupported dtype {code}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        dt = np.dtype(code)
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise ContainerError(f"{path}: array {name!r} payload does not match shape {shape}")
        arrays[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).copy()
    if r.pos != len(buf):
        raise ContainerError(f"{path}: trailing bytes after last array")
    return arrays, metadata
