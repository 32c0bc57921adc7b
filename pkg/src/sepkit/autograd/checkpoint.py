"""Versioned binary container for named parameter tensors.

Layout: 4-byte magic ``SKPT``, little-endian u16 format version, u32
header length, UTF-8 JSON header, then the tensors' float64 data
concatenated row-major in header order. The header carries each tensor's
name and shape plus an arbitrary JSON metadata object (model config,
step counters, and the like).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"SKPT"
_FORMAT_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray], metadata: dict | None = None
                 ) -> None:
    """Write named float64 tensors and a metadata dict to `path`."""
    entries = [{"name": name, "shape": list(np.asarray(array).shape)}
               for name, array in tensors.items()]
    header = {"tensors": entries, "metadata": metadata or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name, array in tensors.items():
            fh.write(np.ascontiguousarray(array, dtype=np.float64).tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (tensors, metadata) written by `save_tensors`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a parameter checkpoint")
        version, header_len = struct.unpack("<HI", fh.read(6))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode())
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path} truncated while reading {entry['name']}")
            # copy: frombuffer views are read-only, but loaded parameters
            # must accept in-place optimizer updates
            tensors[entry["name"]] = (np.frombuffer(raw, dtype=np.float64)
                                      .reshape(shape).copy())
    return tensors, header["metadata"]
