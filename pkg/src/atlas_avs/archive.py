"""Versioned binary archive of named float64 tensors plus JSON metadata.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic, ASCII "ATLASARC"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length N in bytes
    20      N     UTF-8 JSON header
    20+N    ...   body: concatenated tensors, float64 little-endian, row-major

The header is ``{"kind": str, "meta": {...}, "tensors": [{"name", "shape",
"offset", "count"}, ...]}`` where ``offset`` counts bytes from the start of the
body and ``count`` is the element count.  Tensors appear in the body in
header order with no padding.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"ATLASARC"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ArchiveError(IOError):
    pass


def save_archive(path: str | Path, tensors: dict[str, np.ndarray], meta: dict[str, Any],
                 kind: str = "checkpoint") -> Path:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"kind": kind, "meta": meta, "tensors": entries}).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)
    return path


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any], str]:
    """Return ``(tensors, meta, kind)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise ArchiveError(f"{path}: truncated archive")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ArchiveError(f"{path}: not an archive (magic {magic!r})")
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    start = _PREFIX.size
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    body = memoryview(raw)[start + hlen:]
    tensors = {}
    for e in header["tensors"]:
        end = e["offset"] + 8 * e["count"]
        if end > len(body):
            raise ArchiveError(f"{path}: tensor {e['name']} runs past end of file")
        arr = np.frombuffer(body[e["offset"]:end], dtype="<f8").astype(np.float64)
        tensors[e["name"]] = arr.reshape(e["shape"])
    return tensors, header["meta"], header["kind"]
