"""Versioned binary container for named arrays plus a JSON metadata block.

Layout::

    magic (8 bytes) | version (u32 LE) | header length (u64 LE) | header JSON
    | concatenated raw array bytes | sha256 of everything before it (32 bytes)

Used for model checkpoints, training state and fitted density models.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint

FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack(magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    index = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        index.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True).encode()
    body = _PREFIX.pack(magic, FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def unpack(data: bytes, magic: bytes, *, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size + 32:
        raise CorruptCheckpoint(f"{source}: file too short ({len(data)} bytes)")
    got_magic, version, header_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise CorruptCheckpoint(f"{source}: bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{source}: unsupported format version {version}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{source}: content hash mismatch (truncated or modified)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + header_len])
    except ValueError as exc:
        raise CorruptCheckpoint(f"{source}: unreadable header: {exc}") from None
    blob = body[start + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(blob):
            raise CorruptCheckpoint(f"{source}: array {entry['name']!r} runs past end of file")
        arr = np.frombuffer(blob[lo : lo + n], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["meta"], arrays


def write(path: str | Path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, pack(magic, meta, arrays))


def read(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"{path}: cannot read: {exc}") from exc
    return unpack(data, magic, source=str(path))


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
