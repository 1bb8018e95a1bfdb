"""Versioned, deterministic JSON artifacts with bit-exact array payloads."""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ArtifactError(ValueError):
    pass


def encode_array(a) -> dict:
    a = np.asarray(a)
    if a.dtype.kind == "f":
        a = a.astype("<f8")
    elif a.dtype.kind in "iub":
        a = a.astype("<i8")
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a).tobytes()).decode("ascii"),
    }


def decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype=np.dtype(doc["dtype"])).reshape(doc["shape"]).copy()


def dumps(kind: str, payload: dict) -> bytes:
    doc = {"format": "sangria", "kind": kind, "version": FORMAT_VERSION, "payload": payload}
    return (json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n").encode()


def loads(data: bytes, kind: str) -> dict:
    try:
        doc = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"not a model artifact: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != "sangria":
        raise ArtifactError("not a model artifact")
    if doc.get("version") != FORMAT_VERSION:
        raise ArtifactError(
            f"artifact format version {doc.get('version')!r} is not supported (expected {FORMAT_VERSION})"
        )
    if doc.get("kind") != kind:
        raise ArtifactError(f"artifact holds a {doc.get('kind')!r}, expected {kind!r}")
    return doc["payload"]


def save(path, kind: str, payload: dict) -> str:
    data = dumps(kind, payload)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path, kind: str) -> dict:
    return loads(Path(path).read_bytes(), kind)
