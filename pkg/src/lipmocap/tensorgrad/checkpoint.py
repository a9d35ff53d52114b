"""Checkpoint files: a JSON manifest followed by one little-endian raw blob.

Layout::

    b"LIPCKPT1" | uint64 LE manifest length | manifest (UTF-8 JSON) | blob

The manifest lists ``{name, shape, dtype, byte_offset, byte_len}`` per tensor
plus the blob length and SHA-256, so truncation or corruption is detected on
load. Writes go through a temporary file and an atomic rename.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"LIPCKPT1"


class CheckpointError(ValueError):
    pass


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path, data: bytes):
    """Write to a temp file next to ``path``, fsync, then rename over it."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        # mkstemp creates 0600; give the result the permissions open() would
        os.fchmod(fd, 0o666 & ~_umask())
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(tensors: dict, model_kind: str, config=None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                        "byte_offset": offset, "byte_len": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {"format": "lipmocap-checkpoint", "version": 1, "model_kind": model_kind,
                "config": config or {}, "blob_len": len(blob),
                "blob_sha256": hashlib.sha256(blob).hexdigest(), "tensors": entries}
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + blob


def decode_checkpoint(data: bytes):
    """Return ``(manifest, {name: array})``; raises :class:`CheckpointError`."""
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if len(data) < start + hlen:
        raise CheckpointError("checkpoint truncated inside the manifest")
    try:
        manifest = json.loads(data[start:start + hlen])
    except ValueError as e:
        raise CheckpointError(f"unreadable manifest: {e}") from None
    blob = data[start + hlen:]
    if len(blob) != manifest["blob_len"]:
        raise CheckpointError(
            f"checkpoint blob is {len(blob)} bytes, manifest declares {manifest['blob_len']} "
            "(truncated or padded file)")
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError("checkpoint blob checksum mismatch")
    tensors = {}
    for e in manifest["tensors"]:
        lo, n = e["byte_offset"], e["byte_len"]
        if lo + n > len(blob):
            raise CheckpointError(f"tensor {e['name']} extends past the blob")
        arr = np.frombuffer(blob[lo:lo + n], dtype=np.dtype(e["dtype"]))
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return manifest, tensors


def save_checkpoint(path, tensors: dict, model_kind: str, config=None):
    atomic_write_bytes(path, encode_checkpoint(tensors, model_kind, config))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
