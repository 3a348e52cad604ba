"""Versioned binary container for codebooks and trained models.

Layout (little-endian)::

    magic      8 bytes
    version    uint32
    header_len uint32
    header     JSON (utf-8): scalar metadata plus array descriptors
    payload    concatenated raw arrays
    checksum   32-byte SHA-256 of everything before it

Arrays are stored as raw bytes, so float64 values round-trip exactly.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def pack(magic: bytes, meta: dict, arrays: dict) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    descriptors, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        raw = arr.astype(dtype, copy=False).tobytes()
        descriptors.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": descriptors}, sort_keys=True).encode()
    body = magic + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def unpack(blob: bytes, magic: bytes) -> tuple[dict, dict]:
    if len(blob) < 48 or blob[:8] != magic:
        raise ContainerError(f"bad magic: expected {magic!r}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError("checksum mismatch")
    version, header_len = struct.unpack("<II", body[8:16])
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported format version {version}")
    header = json.loads(body[16:16 + header_len])
    start = 16 + header_len
    arrays = {}
    for d in header["arrays"]:
        raw = body[start + d["offset"]: start + d["offset"] + d["nbytes"]]
        arrays[d["name"]] = np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()
    return header["meta"], arrays


def write_atomic(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)
