"""Source side of the boundary: holds raw records, sends only ids and latents.

The request id -> caller map lives in this process and never crosses the
wire. An optional ``wire_tap`` callback sees every byte written to or read
from the inference connection, which is what the boundary tests scan.
"""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from concurrent.futures import Future

import numpy as np

from veil.errors import ProtocolError
from veil.scrae import EncoderModel, encode_batch
from veil.service import protocol as P
from veil.service.audit import AuditLog, latent_checksum

log = logging.getLogger(__name__)


class TransportError(ConnectionError):
    """The inference endpoint is unreachable or the connection failed."""


class RemoteError(RuntimeError):
    """The inference service answered a request with an ERROR frame."""


class _TappedSocket:
    def __init__(self, sock: socket.socket, tap):
        self.sock, self.tap = sock, tap

    def sendall(self, data: bytes):
        if self.tap is not None:
            self.tap("out", bytes(data))
        self.sock.sendall(data)

    def recv(self, n: int) -> bytes:
        data = self.sock.recv(n)
        if self.tap is not None and data:
            self.tap("in", bytes(data))
        return data


class SourceService:
    def __init__(self, model: EncoderModel, inference_addr, audit: AuditLog | None = None, wire_tap=None, timeout: float = 10.0):
        self.model = model
        self.inference_addr = tuple(inference_addr)
        self.audit = audit if audit is not None else AuditLog()
        self.wire_tap = wire_tap
        self.timeout = timeout
        self.frames_sent = 0
        self._pending: dict[bytes, tuple[Future, str]] = {}
        self._completed: set[bytes] = set()
        self._lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._sock: _TappedSocket | None = None
        self._reader: threading.Thread | None = None

    # -- connection

    def connect(self) -> "SourceService":
        try:
            raw = socket.create_connection(self.inference_addr, timeout=self.timeout)
        except OSError as e:
            raise TransportError(f"inference endpoint {self.inference_addr} unreachable: {e}") from None
        raw.settimeout(None)
        self._sock = _TappedSocket(raw, self.wire_tap)
        self._reader = threading.Thread(target=self._read_loop, name="veil-source-reader", daemon=True)
        self._reader.start()
        return self

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.sock.close()
        if self._reader is not None:
            self._reader.join(timeout=5)
        self._fail_pending(TransportError("source connection closed"))

    def __enter__(self):
        return self.connect()

    def __exit__(self, *exc):
        self.close()

    # -- requests

    def submit(self, x_row) -> Future:
        """Encode one raw record and send its latent. Returns a future for the prediction."""
        if self._sock is None:
            raise TransportError("not connected to an inference endpoint")
        z = encode_batch(self.model, np.asarray(x_row, dtype=np.float64).reshape(1, -1))[0]
        rid = P.new_request_id()
        fut: Future = Future()
        checksum = latent_checksum(z)
        with self._lock:
            self._pending[rid] = (fut, checksum)
        frame = P.encode_request(rid, z).encode()
        try:
            with self._send_lock:
                self._sock.sendall(frame)
                self.frames_sent += 1
                self.audit.append(rid, "encoded_out", checksum)
        except OSError as e:
            with self._lock:
                self._pending.pop(rid, None)
            raise TransportError(f"send failed: {e}") from None
        return fut

    def predict(self, x_row) -> np.ndarray:
        return self.submit(x_row).result(timeout=self.timeout)

    def health(self) -> dict:
        """Not routed through the id map: a HEALTH probe on a separate short-lived connection."""
        with socket.create_connection(self.inference_addr, timeout=self.timeout) as s:
            t = _TappedSocket(s, self.wire_tap)
            t.sendall(P.Frame(P.HEALTH).encode())
            f = P.read_frame(t)
        if f is None or f.msg_type != P.HEALTH:
            raise ProtocolError("unexpected health response")
        return json.loads(f.payload.decode())

    # -- responses

    def _read_loop(self) -> None:
        try:
            while True:
                frame = P.read_frame(self._sock)
                if frame is None:
                    break
                self.deliver(frame)
        except (OSError, ConnectionError, ProtocolError) as e:
            log.info("inference connection ended: %s", e)
        self._fail_pending(TransportError("inference connection lost"))

    def deliver(self, frame: P.Frame) -> str:
        """Join one incoming frame to its local caller.

        Returns what happened: ``delivered``, ``error``, ``replayed``,
        ``unknown`` or ``malformed``.
        """
        if frame.msg_type == P.PREDICT_RESP:
            try:
                rid, pred = P.decode_response(frame.payload)
            except ProtocolError as e:
                log.error("malformed PREDICT_RESP: %s", e)
                return "malformed"
            with self._lock:
                entry = self._pending.pop(rid, None)
                replay = entry is None and rid in self._completed
                if entry is not None:
                    self._completed.add(rid)
            if entry is None:
                detail = "replayed_id" if replay else "unknown_id"
                log.warning("dropping response with %s", detail)
                self.audit.append(rid, "prediction_in", "", "error", detail)
                return "replayed" if replay else "unknown"
            fut, checksum = entry
            self.audit.append(rid, "prediction_in", checksum, "ok")
            fut.set_result(pred)
            return "delivered"
        if frame.msg_type == P.ERROR:
            code, rid, reason = P.decode_error(frame.payload)
            log.error("inference error %d: %s", code, reason)
            with self._lock:
                entry = self._pending.pop(rid, None) if rid else None
                if entry is not None:
                    self._completed.add(rid)
            if entry is not None:
                fut, checksum = entry
                self.audit.append(rid, "prediction_in", checksum, "error", f"remote_error_{code}")
                fut.set_exception(RemoteError(f"inference error {code}: {reason}"))
            return "error"
        log.error("unexpected frame type 0x%02x from inference", frame.msg_type)
        return "malformed"

    def _fail_pending(self, exc: Exception) -> None:
        with self._lock:
            pending, self._pending = self._pending, {}
        for fut, _ in pending.values():
            if not fut.done():
                fut.set_exception(exc)

    @property
    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)


class _LocalHandler(socketserver.StreamRequestHandler):
    """Trusted-side JSON-lines interface: ``{"x": [...]}`` -> ``{"prediction": [...]}``."""

    def handle(self):
        source: SourceService = self.server.source
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            try:
                x = json.loads(line)["x"]
                out = {"prediction": source.predict(x).tolist()}
            except Exception as e:  # report to the local caller, keep serving
                out = {"error": f"{type(e).__name__}: {e}"}
            self.wfile.write((json.dumps(out) + "\n").encode())


class LocalSourceServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, source: SourceService, host: str = "127.0.0.1", port: int = 0):
        self.source = source
        super().__init__((host, port), _LocalHandler)
