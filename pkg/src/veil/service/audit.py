"""Append-only NDJSON audit log for boundary crossings."""
from __future__ import annotations

import hashlib
import json
import threading
import time
from pathlib import Path

import numpy as np

DIRECTIONS = ("encoded_out", "prediction_in")
OUTCOMES = ("ok", "error")
FIELDS = {"timestamp", "request_id", "direction", "latent_checksum", "outcome", "detail"}


def latent_checksum(latent) -> str:
    """64-bit BLAKE2b digest of the float32 latent bytes, as 16 hex digits."""
    raw = np.asarray(latent, dtype="<f4").tobytes()
    return hashlib.blake2b(raw, digest_size=8).hexdigest()


def validate_record(rec: dict) -> None:
    """Schema check: only the known fields, only scalar strings or numbers."""
    extra = set(rec) - FIELDS
    if extra:
        raise ValueError(f"audit record has unexpected fields {sorted(extra)}")
    if rec["direction"] not in DIRECTIONS or rec["outcome"] not in OUTCOMES:
        raise ValueError("audit record has an invalid direction or outcome")
    for k, v in rec.items():
        if not isinstance(v, (str, int, float)):
            raise ValueError(f"audit field {k!r} must be a scalar")


class AuditLog:
    """Thread-safe audit sink. Records are kept in memory and optionally appended to a file."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def append(self, request_id: bytes, direction: str, checksum: str, outcome: str = "ok", detail: str | None = None) -> dict:
        rec = {
            "timestamp": time.time(),
            "request_id": request_id.hex(),
            "direction": direction,
            "latent_checksum": checksum,
            "outcome": outcome,
        }
        if detail:
            rec["detail"] = detail
        validate_record(rec)
        with self._lock:
            self.records.append(rec)
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec

    def count(self, direction: str, outcome: str | None = None) -> int:
        with self._lock:
            return sum(1 for r in self.records if r["direction"] == direction and (outcome is None or r["outcome"] == outcome))


def read_audit(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            validate_record(rec)
            out.append(rec)
    return out
