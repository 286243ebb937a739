"""Binary model artifact: magic, JSON header, then float64 parameter blobs.

Layout::

    b"VEILMDL1" | u64 LE header length | UTF-8 JSON header | blobs

The header lists every blob as ``{"name", "shape"}`` in file order. Blobs are
little-endian float64, C order. The JSON is written with sorted keys and no
timestamps, so saving the same model twice gives identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from veil import losses as L
from veil.errors import ProtocolError

MAGIC = b"VEILMDL1"
FORMAT_VERSION = 1


def _strict(obj):
    if isinstance(obj, dict):
        return {str(k): _strict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_strict(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps(header: dict, blobs: dict[str, np.ndarray]) -> bytes:
    header = _strict(header)
    header["format_version"] = FORMAT_VERSION
    header["blobs"] = [{"name": k, "shape": list(np.shape(v))} for k, v in blobs.items()]
    raw = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(raw)), raw]
    for v in blobs.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise ProtocolError("not a model artifact (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise ProtocolError("truncated artifact header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"artifact header is not valid JSON: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ProtocolError(f"unsupported artifact version {header.get('format_version')!r}")
    off = 16 + hlen
    blobs = {}
    for entry in header.get("blobs", []):
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = off + 8 * n
        if end > len(data):
            raise ProtocolError(f"truncated blob {entry['name']!r}")
        blobs[entry["name"]] = np.frombuffer(data[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        off = end
    if off != len(data):
        raise ProtocolError(f"{len(data) - off} trailing bytes after the last blob")
    return header, blobs


def save(path, header: dict, blobs: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(header, blobs))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())


def save_encoder(path, model) -> None:
    from veil.scrae import OPERATOR_WHITELIST

    ops = model.spec.operators()
    assert set(ops) <= set(OPERATOR_WHITELIST)
    blobs = dict(model.params)
    if model.centers is not None:
        blobs["centers.mu"] = model.centers.centers
        blobs["centers.counts"] = model.centers.counts.astype(np.float64)
    header = {
        "kind": "encoder",
        "spec": model.spec.to_dict(),
        "operators": ops,
        "train_meta": model.train_meta,
    }
    save(path, header, blobs)


def load_encoder(path):
    from veil.scrae import EncoderModel, EncoderSpec

    header, blobs = load(path)
    if header.get("kind") != "encoder":
        raise ProtocolError(f"expected an encoder artifact, found kind {header.get('kind')!r}")
    spec = EncoderSpec.from_dict(header["spec"])
    centers = None
    if "centers.mu" in blobs:
        centers = L.ClassCenters(blobs.pop("centers.mu"), blobs.pop("centers.counts").astype(np.int64))
    model = EncoderModel(spec, dict(blobs), centers, header.get("train_meta", {}))
    model.train_meta = dict(model.train_meta)
    model.train_meta["operators"] = header.get("operators", [])
    return model


def artifact_operators(path) -> list[str]:
    header, _ = load(path)
    return list(header.get("operators", []))
