"""Versioned array container: a JSON manifest followed by raw little-endian float64 payload.

Layout::

    MAGIC (8 bytes) | manifest length (uint64 LE) | manifest JSON (UTF-8) | payload

The manifest lists every array with its shape and byte offset into the
payload, plus a free-form ``meta`` object. Writing is canonical (sorted
keys, fixed separators), so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TMAEPFM1"


class ContainerError(Exception):
    code = "container"


class VersionMismatch(ContainerError):
    code = "version_mismatch"


class TruncatedPayload(ContainerError):
    code = "truncated_payload"


class ShapeMismatch(ContainerError):
    code = "shape_mismatch"


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode(arrays: dict[str, np.ndarray], meta: dict, version: int) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = dumps_json({"format_version": version, "arrays": entries, "meta": meta}).encode()
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)


def decode(blob: bytes, version: int) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ContainerError("not an array container (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + n:
        raise TruncatedPayload("manifest truncated")
    try:
        manifest = json.loads(blob[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable manifest: {exc}") from None
    if manifest.get("format_version") != version:
        raise VersionMismatch(f"container version {manifest.get('format_version')}, expected {version}")
    payload = memoryview(blob)[16 + n:]
    arrays = {}
    for e in manifest["arrays"]:
        shape = tuple(e["shape"])
        expected = 8 * int(np.prod(shape, dtype=np.int64))
        if e["nbytes"] != expected:
            raise ShapeMismatch(f"array {e['name']!r}: {e['nbytes']} bytes does not fit shape {shape}")
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise TruncatedPayload(f"array {e['name']!r} extends past end of payload")
        arrays[e["name"]] = np.frombuffer(payload[e["offset"]:end], dtype="<f8").reshape(shape).astype(np.float64)
    return arrays, manifest["meta"]


def save(path, arrays: dict[str, np.ndarray], meta: dict, version: int) -> None:
    Path(path).write_bytes(encode(arrays, meta, version))


def load(path, version: int) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes(), version)
