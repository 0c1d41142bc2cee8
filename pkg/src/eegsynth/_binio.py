"""Versioned little-endian container for named arrays.

Layout: 4-byte magic, uint32 version, uint32 header length, UTF-8 JSON header,
then the raw array payloads in header order.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import CorruptBundleError


def save_arrays(path, magic, version, meta, arrays):
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    entries = []
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        payload.append(le.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", version, len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def load_arrays(path, magic):
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise CorruptBundleError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    header = json.loads(raw[12:12 + hlen])
    offset = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CorruptBundleError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        offset += nbytes
    return version, header["meta"], arrays
