"""Deterministic binary container for named tensors plus a JSON meta block.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
raw tensor payload (C order, concatenated in header order). The header JSON
is serialized with sorted keys and no whitespace, and the payload hash is
embedded, so identical content yields identical bytes. Used for checkpoints
and prepared-frame caches.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import ArtifactError

MAGIC = b"GAITC001"

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
           "<i4": np.dtype("<i4"), "<i8": np.dtype("<i8"),
           "|u1": np.dtype("|u1")}


def save_container(path, meta, tensors):
    """Write `tensors` (name -> ndarray) and `meta` (JSON-safe dict) to `path`."""
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        key = dtype.str if dtype.str in _DTYPES else None
        if key is None:
            raise ArtifactError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        raw = arr.astype(_DTYPES[key], copy=False).tobytes()
        entries.append({"name": name, "dtype": key,
                        "shape": list(arr.shape), "nbytes": len(raw)})
        payload.extend(raw)
    header = {
        "meta": meta,
        "tensors": entries,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_container(path):
    """Read a container; returns (meta, tensors). Raises ArtifactError on corruption."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise ArtifactError(f"{path}: not a gaitcast container (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + hlen:
        raise ArtifactError(f"{path}: truncated header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: corrupt header: {exc}") from exc
    payload = data[16 + hlen:]
    expected = sum(e["nbytes"] for e in header["tensors"])
    if len(payload) != expected:
        raise ArtifactError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ArtifactError(f"{path}: payload checksum mismatch")
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        n = entry["nbytes"]
        arr = np.frombuffer(payload[offset:offset + n], dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
        offset += n
    return header["meta"], tensors


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
