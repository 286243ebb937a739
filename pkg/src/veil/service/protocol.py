"""Length-prefixed binary frames.

Frame: ``b"VEIL" | version u8 | msg_type u8 | payload_len u64 LE | payload``.
A prediction request payload is a 16-byte opaque id followed by ``E``
little-endian float32 latents; a response carries the id followed by the
float64 prediction vector.
"""
from __future__ import annotations

import os
import socket
import struct
from dataclasses import dataclass

import numpy as np

from veil.errors import ProtocolError

MAGIC = b"VEIL"
VERSION = 0x01
HEADER = struct.Struct("<4sBBQ")
HEADER_SIZE = HEADER.size  # 14

PREDICT_REQ = 0x01
PREDICT_RESP = 0x02
ERROR = 0x03
HEALTH = 0x04
MSG_TYPES = (PREDICT_REQ, PREDICT_RESP, ERROR, HEALTH)

ID_BYTES = 16
MAX_PAYLOAD = 1 << 20

# error reason codes (first byte of an ERROR payload; the rest is UTF-8 text)
ERR_BAD_MAGIC = 1
ERR_BAD_VERSION = 2
ERR_UNKNOWN_TYPE = 3
ERR_BAD_LENGTH = 4
ERR_TOO_LARGE = 5
ERR_INTERNAL = 6


@dataclass(frozen=True)
class Frame:
    msg_type: int
    payload: bytes = b""
    version: int = VERSION

    def encode(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.msg_type, len(self.payload)) + self.payload


def new_request_id() -> bytes:
    """Uniformly random id; never derived from the record being encoded."""
    return os.urandom(ID_BYTES)


def parse_header(buf: bytes):
    """Returns ``(version, msg_type, payload_len)``; raises on bad magic."""
    if len(buf) < HEADER_SIZE:
        raise ProtocolError("short frame header")
    magic, version, msg_type, n = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ProtocolError("bad frame magic")
    return version, msg_type, n


def decode(buf: bytes) -> Frame:
    """Decode exactly one frame from ``buf`` (trailing bytes are an error)."""
    version, msg_type, n = parse_header(buf)
    if len(buf) != HEADER_SIZE + n:
        raise ProtocolError(f"frame declares {n} payload bytes, has {len(buf) - HEADER_SIZE}")
    return Frame(msg_type, bytes(buf[HEADER_SIZE:]), version)


def encode_request(request_id: bytes, latent) -> Frame:
    if len(request_id) != ID_BYTES:
        raise ProtocolError("request id must be 16 bytes")
    z = np.asarray(latent, dtype="<f4").reshape(-1)
    return Frame(PREDICT_REQ, request_id + z.tobytes())


def decode_request(payload: bytes, latent_dim: int):
    if len(payload) != ID_BYTES + 4 * latent_dim:
        raise ProtocolError(f"PREDICT_REQ payload must be {ID_BYTES + 4 * latent_dim} bytes, got {len(payload)}")
    return payload[:ID_BYTES], np.frombuffer(payload, dtype="<f4", offset=ID_BYTES).astype(np.float32)


def encode_response(request_id: bytes, prediction) -> Frame:
    p = np.asarray(prediction, dtype="<f8").reshape(-1)
    return Frame(PREDICT_RESP, request_id + p.tobytes())


def decode_response(payload: bytes):
    if len(payload) < ID_BYTES or (len(payload) - ID_BYTES) % 8:
        raise ProtocolError(f"malformed PREDICT_RESP payload of {len(payload)} bytes")
    return payload[:ID_BYTES], np.frombuffer(payload, dtype="<f8", offset=ID_BYTES).copy()


ERR_BAD_VALUE = 7


def error_frame(code: int, reason: str, request_id: bytes = b"") -> Frame:
    """ERROR payload: ``code u8 | id_len u8 | id | UTF-8 reason``.

    ``request_id`` is echoed when the offending request carried one, so the
    Source can notify the right caller.
    """
    return Frame(ERROR, bytes([code, len(request_id)]) + request_id + reason.encode("utf-8"))


def decode_error(payload: bytes):
    """Returns ``(code, request_id, reason)``; tolerant of short payloads."""
    if len(payload) < 2:
        return (payload[0] if payload else 0), b"", ""
    n = payload[1]
    rid = payload[2 : 2 + n]
    return payload[0], rid, payload[2 + n :].decode("utf-8", errors="replace")


def recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        part = sock.recv(min(n - got, 65536))
        if not part:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(part)
        got += len(part)
    return b"".join(chunks)


def read_frame(sock: socket.socket, max_payload: int = MAX_PAYLOAD):
    """Read one frame. Returns ``None`` on clean EOF before a header.

    Raises :class:`ProtocolError` for bad magic or an oversized payload; the
    stream cannot be resynchronised after either, so callers close it.
    """
    first = sock.recv(HEADER_SIZE)
    if not first:
        return None
    head = first if len(first) == HEADER_SIZE else first + recv_exact(sock, HEADER_SIZE - len(first))
    version, msg_type, n = parse_header(head)
    if n > max_payload:
        raise ProtocolError(f"payload of {n} bytes exceeds the {max_payload}-byte limit")
    payload = recv_exact(sock, n) if n else b""
    return Frame(msg_type, payload, version)
