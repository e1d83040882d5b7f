"""Single-file binary checkpoints.

Layout: 4-byte magic, u32 format version, u64 header length, a canonical
JSON header (config echo, metadata, and per-array name/shape/dtype/offset
entries plus a sha256 of the payload), then the raw little-endian array
payload. Loading verifies magic, version, and digest before touching data.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .tensor import ParameterStore

MAGIC = b"MRCP"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Corrupt, truncated, or mismatched checkpoint."""


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(path: str, store: ParameterStore, config: dict,
                    meta: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in store.state_arrays().items():
        raw = _le(arr).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": np.dtype(arr.dtype).newbyteorder("<").str,
            "trainable": store.is_trainable(name),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "meta": meta or {},
        "entries": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)


def load_checkpoint(path: str) -> tuple[dict, dict, dict]:
    """Returns (arrays by name, config, full header)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (head_len,) = struct.unpack_from("<Q", blob, 8)
    head_end = 16 + head_len
    if len(blob) < head_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:head_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    payload = blob[head_end:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, header says "
            f"{header.get('payload_bytes')}")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload sha256 mismatch")
    arrays = {}
    for ent in header["entries"]:
        arr = np.frombuffer(payload, dtype=np.dtype(ent["dtype"]),
                            count=int(np.prod(ent["shape"], dtype=np.int64)),
                            offset=ent["offset"])
        arrays[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return arrays, header.get("config", {}), header


def load_into_store(store: ParameterStore, path: str) -> dict:
    """Restore saved arrays into an already-built store with matching names
    and shapes; returns the checkpoint header."""
    arrays, _config, header = load_checkpoint(path)
    names = store.state_arrays()
    missing = sorted(set(names) - set(arrays))
    extra = sorted(set(arrays) - set(names))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names do not match store "
            f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for name, arr in arrays.items():
        dst = names[name]
        if tuple(arr.shape) != tuple(dst.shape):
            raise CheckpointError(
                f"{path}: {name} has shape {tuple(arr.shape)}, store expects "
                f"{tuple(dst.shape)}")
        dst[...] = arr.astype(dst.dtype, copy=False)
    return header
