"""
Flat key -> tensor checkpoint files.

Layout (all integers little-endian):

    8 bytes   magic  b"TORCKPT\\0"
    uint32    format version
    uint64    header length in bytes
    header    UTF-8 JSON: {"format", "version", "metadata", "tensors": [{name, shape, offset, count}]}
    payload   every tensor flattened in row-major order as little-endian float64
"""

import json
import os
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

MAGIC = b"TORCKPT\0"
FORMAT_TAG = "tordistill-flat"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    def __init__(self, message="Checkpoint error occurred"):
        super().__init__(message)


def write_tensors(path: Union[str, Path], tensors: Dict[str, np.ndarray],
                  metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries = []
    offset = 0
    for name, tensor in tensors.items():
        count = int(np.asarray(tensor).size)
        entries.append({"name": name, "shape": list(np.shape(tensor)), "offset": offset, "count": count})
        offset += count * 8

    header = json.dumps({
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "metadata": metadata or {},
        "tensors": entries,
    }, sort_keys=True).encode("utf-8")

    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)))
        f.write(header)
        for tensor in tensors.values():
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    os.replace(tmp_path, path)
    return path


def read_tensors(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint file not found: {path}")

    raw = path.read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"Checkpoint too short: {path}")
    magic, version, header_len = _PREAMBLE.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"Not a checkpoint file (bad magic): {path}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}, expected {FORMAT_VERSION}")

    start = _PREAMBLE.size
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header: {e}")
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"Unknown checkpoint format tag: {header.get('format')}")

    payload = raw[start + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["count"] * 8
        if end > len(payload):
            raise CheckpointError(f"Truncated tensor '{entry['name']}' in {path}")
        flat = np.frombuffer(payload, dtype="<f8", count=entry["count"], offset=entry["offset"])
        tensors[entry["name"]] = flat.astype(np.float64).reshape(entry["shape"])
    return tensors, header.get("metadata", {})
