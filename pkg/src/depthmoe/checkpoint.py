"""Parameter checkpoint file format.

Layout (all integers little-endian):

    magic   b"DMCK"
    version uint32
    hlen    uint64           length of the JSON header in bytes
    header  JSON             {"tensors": [{"name", "shape", "offset", "nbytes", "crc32"}, ...]}
    data    concatenated row-major float64 buffers

Offsets are relative to the start of the data section. Save/load round-trips
are bit-exact; every tensor's CRC32 is verified on load.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import CheckpointError

MAGIC = b"DMCK"
VERSION = 1


def param_checksum(data: np.ndarray) -> int:
    """CRC32 of the raw row-major float64 bytes."""
    return zlib.crc32(np.ascontiguousarray(data, dtype=np.float64).tobytes())


def save_checkpoint(path, named_params: dict[str, Tensor]):
    entries = []
    blobs = []
    offset = 0
    for name, p in named_params.items():
        raw = np.ascontiguousarray(p.data, dtype=np.float64).tobytes()
        entries.append({
            "name": name,
            "shape": list(p.data.shape),
            "offset": offset,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    data_start = 16 + hlen
    out: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = data_start + entry["offset"]
        blob = raw[start : start + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        if zlib.crc32(blob) != entry["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch for tensor {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=np.float64).reshape(entry["shape"]).copy()
        out[entry["name"]] = arr
    return out


def restore_into(named_params: dict[str, Tensor], loaded: dict[str, np.ndarray]):
    """Copy loaded arrays into existing parameters, shape-checked."""
    for name, p in named_params.items():
        if name not in loaded:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = loaded[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"parameter {name!r} shape mismatch: checkpoint {arr.shape}, model {p.data.shape}"
            )
        p.data[...] = arr
