"""Inference side of the boundary: latents in, predictions out, nothing stored."""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading

import numpy as np

from veil.downstream import LinearDownstream
from veil.errors import ProtocolError
from veil.service import protocol as P

log = logging.getLogger(__name__)


class InferenceHandler:
    """Pure request -> response logic, independent of sockets.

    ``respond`` never raises: every frame maps to a response frame or an
    ERROR frame. The model is read-only, so one handler serves all threads.
    """

    def __init__(self, model: LinearDownstream):
        self.model = model
        self.latent_dim = model.latent_dim

    def respond(self, frame: P.Frame) -> P.Frame:
        try:
            return self._respond(frame)
        except Exception as e:  # fuzz contract: a malformed frame must not take the server down
            log.exception("internal error while answering a frame")
            return P.error_frame(P.ERR_INTERNAL, f"internal error: {type(e).__name__}")

    def _respond(self, frame: P.Frame) -> P.Frame:
        if frame.version != P.VERSION:
            return P.error_frame(P.ERR_BAD_VERSION, f"unsupported version {frame.version}")
        if frame.msg_type == P.HEALTH:
            body = {"status": "ok", "latent_dim": self.latent_dim, "output_dim": self.model.output_dim}
            return P.Frame(P.HEALTH, json.dumps(body, sort_keys=True).encode())
        if frame.msg_type != P.PREDICT_REQ:
            return P.error_frame(P.ERR_UNKNOWN_TYPE, f"unexpected message type 0x{frame.msg_type:02x}")
        rid = frame.payload[: P.ID_BYTES] if len(frame.payload) >= P.ID_BYTES else b""
        try:
            rid, z = P.decode_request(frame.payload, self.latent_dim)
        except ProtocolError as e:
            return P.error_frame(P.ERR_BAD_LENGTH, str(e), rid)
        if not np.all(np.isfinite(z)):
            return P.error_frame(P.ERR_BAD_VALUE, "latent contains non-finite values", rid)
        pred = self.model.predict_vector(z.astype(np.float64)[None, :])[0]
        return P.encode_response(rid, pred)


class _ConnectionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        handler: InferenceHandler = self.server.handler
        sock: socket.socket = self.request
        while True:
            try:
                frame = P.read_frame(sock, self.server.max_payload)
            except ProtocolError as e:
                # the byte stream cannot be resynchronised: answer once, then drop the connection
                code = P.ERR_TOO_LARGE if "exceeds" in str(e) else P.ERR_BAD_MAGIC
                _send(sock, P.error_frame(code, str(e)))
                return
            except (ConnectionError, OSError):
                return
            if frame is None:
                return
            if not _send(sock, handler.respond(frame)):
                return


def _send(sock, frame: P.Frame) -> bool:
    try:
        sock.sendall(frame.encode())
        return True
    except OSError:
        return False


class InferenceServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, model: LinearDownstream, host: str = "127.0.0.1", port: int = 0, max_payload: int = P.MAX_PAYLOAD):
        self.handler = InferenceHandler(model)
        self.max_payload = max_payload
        super().__init__((host, port), _ConnectionHandler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> "InferenceServer":
        self._thread = threading.Thread(target=self.serve_forever, name="veil-inference", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
