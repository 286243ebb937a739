"""On-disk latent batches.

Layout: ``b"ICAL"`` then four little-endian u32 (version, n_rows, latent_dim,
flags), then ``n_rows * latent_dim`` float32 values, then ``n_rows`` float64
targets when flag bit 0 is set. Total size is ``20 + 4*n*E (+ 8*n)`` bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from veil.errors import ProtocolError

MAGIC = b"ICAL"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
FLAG_TARGETS = 1


@dataclass
class LatentBatch:
    latents: np.ndarray  # (n, E) float32
    targets: np.ndarray | None = None  # (n,) float64

    def __post_init__(self):
        self.latents = np.ascontiguousarray(np.asarray(self.latents, dtype=np.float32))
        if self.latents.ndim != 2:
            raise ValueError("latents must be a 2-D array")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
            if self.targets.shape[0] != self.latents.shape[0]:
                raise ValueError("targets must have one value per latent row")


def expected_size(n: int, e: int, targets: bool) -> int:
    return HEADER.size + 4 * n * e + (8 * n if targets else 0)


def dumps(batch: LatentBatch) -> bytes:
    n, e = batch.latents.shape
    flags = FLAG_TARGETS if batch.targets is not None else 0
    parts = [HEADER.pack(MAGIC, VERSION, n, e, flags), batch.latents.astype("<f4").tobytes()]
    if batch.targets is not None:
        parts.append(batch.targets.astype("<f8").tobytes())
    return b"".join(parts)


def loads(data: bytes) -> LatentBatch:
    if len(data) < HEADER.size:
        raise ProtocolError("latent file shorter than its header")
    magic, version, n, e, flags = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError("not a latent batch file (bad magic)")
    if version != VERSION:
        raise ProtocolError(f"unsupported latent file version {version}")
    has_t = bool(flags & FLAG_TARGETS)
    if len(data) != expected_size(n, e, has_t):
        raise ProtocolError(f"latent file is {len(data)} bytes, header implies {expected_size(n, e, has_t)}")
    off = HEADER.size
    lat = np.frombuffer(data, dtype="<f4", count=n * e, offset=off).reshape(n, e)
    targets = None
    if has_t:
        targets = np.frombuffer(data, dtype="<f8", count=n, offset=off + 4 * n * e)
    return LatentBatch(lat.astype(np.float32), None if targets is None else targets.astype(np.float64))


def write(path, batch: LatentBatch) -> int:
    data = dumps(batch)
    Path(path).write_bytes(data)
    return len(data)


def read(path) -> LatentBatch:
    return loads(Path(path).read_bytes())
