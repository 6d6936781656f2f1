"""Deterministic JSON artifact container used by every file format in the repo.

Layout (version 1)::

    {
      "format": "<kind>",          # e.g. "body-assets", "dataset-manifest"
      "version": 1,
      "meta": {...},               # scalar / small structured header fields
      "arrays": {
        "<name>": {"dtype": "float32", "shape": [..], "data": "<base64>"}
      },
      "checksum": "sha256:<hex>"
    }

Array payloads are raw little-endian bytes in C order, base64 encoded, so
round trips are bit exact.  The file is the canonical JSON dump (sorted
keys, compact separators) of the object above, which makes byte-identical
output a direct consequence of value-identical content.  The checksum is
the sha256 of the canonical dump of everything except the checksum field.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from typing import Any, Mapping

import numpy as np

from .errors import ChecksumMismatch, MalformedRecord, MissingFile

CONTAINER_VERSION = 1

_ALLOWED_DTYPES = {"float32", "float64", "int32", "int64", "uint8"}


def canonical_json(obj: Any) -> str:
    """Canonical JSON text: sorted keys, no whitespace, plain floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.name
    if dtype not in _ALLOWED_DTYPES:
        raise MalformedRecord(f"array dtype {dtype!r} not supported by the container")
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return {
        "dtype": dtype,
        "shape": list(arr.shape),
        "data": base64.b64encode(little.tobytes()).decode("ascii"),
    }


def _decode_array(name: str, entry: Mapping) -> np.ndarray:
    try:
        dtype = entry["dtype"]
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"array {name!r}: malformed entry ({exc})") from exc
    if dtype not in _ALLOWED_DTYPES:
        raise MalformedRecord(f"array {name!r}: unsupported dtype {dtype!r}")
    arr = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<"))
    expected = int(np.prod(shape)) if shape else 1
    if arr.size != expected:
        raise MalformedRecord(
            f"array {name!r}: payload has {arr.size} elements, shape {shape} needs {expected}"
        )
    return arr.reshape(shape).astype(dtype)


def payload_checksum(kind: str, version: int, meta: Mapping, arrays: Mapping[str, dict]) -> str:
    body = {"format": kind, "version": version, "meta": meta, "arrays": arrays}
    return "sha256:" + sha256_hex(canonical_json(body))


def dumps(kind: str, meta: Mapping, arrays: Mapping[str, np.ndarray] | None = None) -> bytes:
    encoded = {name: _encode_array(arr) for name, arr in (arrays or {}).items()}
    obj = {
        "format": kind,
        "version": CONTAINER_VERSION,
        "meta": meta,
        "arrays": encoded,
        "checksum": payload_checksum(kind, CONTAINER_VERSION, meta, encoded),
    }
    return canonical_json(obj).encode("utf-8")


def save(path: str | os.PathLike, kind: str, meta: Mapping,
         arrays: Mapping[str, np.ndarray] | None = None) -> None:
    data = dumps(kind, meta, arrays)
    with open(path, "wb") as fh:
        fh.write(data)


def loads(data: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedRecord(f"container is not valid JSON: {exc}") from exc
    for field in ("format", "version", "meta", "arrays", "checksum"):
        if field not in obj:
            raise MalformedRecord(f"container missing field {field!r}")
    expected = payload_checksum(obj["format"], obj["version"], obj["meta"], obj["arrays"])
    if obj["checksum"] != expected:
        raise ChecksumMismatch(
            f"checksum mismatch: file says {obj['checksum']}, content hashes to {expected}"
        )
    if kind is not None and obj["format"] != kind:
        raise MalformedRecord(f"expected a {kind!r} container, found {obj['format']!r}")
    arrays = {name: _decode_array(name, entry) for name, entry in obj["arrays"].items()}
    return obj["meta"], arrays


def load(path: str | os.PathLike, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if not os.path.exists(path):
        raise MissingFile(f"no such file: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    return loads(data, kind)
