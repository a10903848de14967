"""A small deterministic container: JSON header followed by raw arrays.

Layout: ``b"LCB1"``, little-endian u64 header length, UTF-8 JSON header
(sorted keys), then each array's little-endian bytes in header order.
Identical content always yields identical bytes, so file hashes are stable.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LCB1"


def dumps(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        blobs.append(le.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def loads(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:4] != MAGIC:
        raise ValueError("not an LCB1 bundle")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=dt).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(dt.newbyteorder("="))
        offset += nbytes
    return header["meta"], arrays


def write(path, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    raw = dumps(meta, arrays)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())


def peek_meta(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if head[:4] != MAGIC:
            raise ValueError(f"{path}: not an LCB1 bundle")
        (hlen,) = struct.unpack("<Q", head[4:12])
        return json.loads(fh.read(hlen).decode("utf-8"))["meta"]
