"""Checkpoint file: JSON manifest (version, config, ordered parameter names
with shapes and byte offsets) followed by a little-endian float32 flat
payload. load(save(p)) is bit-exact; arrays come back as float64 upcast
from the stored float32, so a second save reproduces the file byte for
byte.
"""

import json
import struct

import numpy as np

from .dataio import atomic_write_bytes
from .network import NetworkConfig

MAGIC = b"LIPEMB01"
VERSION = 1


def save_checkpoint(path, params, config):
    names = sorted(params)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.asarray(params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        offset += len(blob)
        blobs.append(blob)
    manifest = json.dumps(
        {"version": VERSION, "config": config.to_dict(), "params": entries},
        sort_keys=True,
    ).encode()
    payload = MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(blobs)
    atomic_write_bytes(path, payload)


def load_checkpoint(path):
    """Returns (params, config)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode())
        if manifest["version"] != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {manifest['version']}")
        payload = fh.read()
    config = NetworkConfig.from_dict(manifest["config"])
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return params, config
