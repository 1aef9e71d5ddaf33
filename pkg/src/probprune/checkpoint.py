"""Versioned, checksummed binary checkpoints of named arrays plus scalars.

File layout (integers little-endian):

    bytes 0..3    magic b"PPCK"
    bytes 4..7    uint32 format version (currently 1)
    bytes 8..15   uint64 payload length
    bytes 16..47  sha256 digest of the payload
    bytes 48..    payload

payload = uint64 header length, that many bytes of UTF-8 JSON, then the raw
C-order array bytes.  The JSON header is
    {"arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...],
     "scalars": {...}}
with arrays in name-sorted order and offsets relative to the end of the
header.  Writing is atomic (tmp file + rename) and save -> load -> save is
byte-identical, so checkpoints can be compared with a plain file hash.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .layers import ConvLayer, FcLayer
from .network import ConvNetModel

MAGIC = b"PPCK"
VERSION = 1


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray], scalars: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append(
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
    header = json.dumps(
        {"arrays": entries, "scalars": scalars}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    payload = struct.pack("<Q", len(header)) + header + b"".join(blobs)
    digest = hashlib.sha256(payload).digest()
    blob = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(payload)) + digest + payload
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < 48 or data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    payload_len = struct.unpack("<Q", data[8:16])[0]
    digest = data[16:48]
    payload = data[48:]
    if len(payload) != payload_len:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, header promises {payload_len} (truncated?)"
        )
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    header_len = struct.unpack("<Q", payload[:8])[0]
    header = json.loads(payload[8 : 8 + header_len].decode("utf-8"))
    body = payload[8 + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["scalars"]


def model_arrays(model: ConvNetModel) -> dict[str, np.ndarray]:
    """Named parameter/mask arrays of a model, keyed layer{i}.{field}."""
    out: dict[str, np.ndarray] = {}
    for idx, layer in enumerate(model.layers):
        if isinstance(layer, ConvLayer):
            out[f"layer{idx}.weights"] = layer.weights
            out[f"layer{idx}.bias"] = layer.bias
            out[f"layer{idx}.mask"] = layer.mask
        elif isinstance(layer, FcLayer):
            out[f"layer{idx}.weights"] = layer.weights
            out[f"layer{idx}.bias"] = layer.bias
    return out


def restore_model_arrays(model: ConvNetModel, arrays: dict[str, np.ndarray]) -> None:
    """Load model_arrays output back into a freshly built model of the same spec."""
    for idx, layer in enumerate(model.layers):
        if isinstance(layer, (ConvLayer, FcLayer)):
            for field in ("weights", "bias"):
                key = f"layer{idx}.{field}"
                if key not in arrays:
                    raise CheckpointError(f"checkpoint is missing array {key}")
                stored = arrays[key]
                current = getattr(layer, field)
                if tuple(stored.shape) != current.shape:
                    raise CheckpointError(
                        f"{key}: checkpoint shape {tuple(stored.shape)} does not match "
                        f"model shape {current.shape}"
                    )
                setattr(layer, field, stored.astype(model.dtype, copy=True))
        if isinstance(layer, ConvLayer):
            key = f"layer{idx}.mask"
            if key not in arrays:
                raise CheckpointError(f"checkpoint is missing array {key}")
            layer.set_mask(arrays[key])
            layer.invalidate()
