"""Threaded TCP front end for a :class:`Verifier`."""

from __future__ import annotations

import logging
import socketserver
import threading
import time
from typing import Callable

from ..errors import CorruptFingerprint, DuplicateDevice, ProtocolError, RegistryError
from ..fingerprint import loads_fingerprint
from . import wire
from .messages import AuthAttempt
from .registry import Registry
from .verifier import DEFAULT_FRESHNESS, Verifier

log = logging.getLogger(__name__)


class _Handler(socketserver.BaseRequestHandler):
    server: "VerifierServer"

    def handle(self):
        sock = self.request
        while True:
            try:
                msg = wire.read_frame(sock)
            except EOFError:
                return
            except ProtocolError as exc:
                self._send(wire.ErrorMessage(wire.ErrorCode.MALFORMED_FRAME, str(exc)))
                return
            except OSError:
                return
            try:
                reply = self.server.dispatch(msg)
            except RegistryError as exc:
                log.error("registry fault: %s", exc)
                reply = wire.ErrorMessage(wire.ErrorCode.INTERNAL, f"storage fault: {exc}")
            if not self._send(reply):
                return

    def _send(self, msg) -> bool:
        try:
            wire.write_frame(self.request, msg)
            return True
        except OSError:
            return False


class VerifierServer(socketserver.ThreadingTCPServer):
    """Serves enrollment and authentication requests, one thread per connection."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(
        self,
        registry: Registry,
        address: tuple[str, int] = ("127.0.0.1", 0),
        freshness_window: int = DEFAULT_FRESHNESS,
        clock: Callable[[], float] = time.time,
    ):
        self.verifier = Verifier(registry, freshness_window)
        self.clock = clock
        super().__init__(address, _Handler)

    @property
    def registry(self) -> Registry:
        return self.verifier.registry

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def dispatch(self, msg):
        if isinstance(msg, AuthAttempt):
            return self.verifier.submit(msg, int(self.clock()))
        if isinstance(msg, wire.EnrollRequest):
            return self._enroll(msg)
        return wire.ErrorMessage(wire.ErrorCode.UNSUPPORTED_TYPE, f"unexpected {type(msg).__name__}")

    def _enroll(self, req: wire.EnrollRequest) -> wire.EnrollResponse:
        try:
            # parse here so a client can never make the server open a path
            fp = loads_fingerprint(req.fingerprint_text, "<enroll request>")
            rec = self.registry.enroll(
                req.device_id, fp, req.theta, req.P, req.max_retries,
                enrolled_at=int(self.clock()),
            )
        except DuplicateDevice as exc:
            return wire.EnrollResponse(wire.EnrollCode.DUPLICATE_DEVICE, 0, str(exc))
        except CorruptFingerprint as exc:
            return wire.EnrollResponse(wire.EnrollCode.CORRUPT_FINGERPRINT, 0, str(exc))
        except ValueError as exc:
            return wire.EnrollResponse(wire.EnrollCode.INVALID_REQUEST, 0, str(exc))
        return wire.EnrollResponse(wire.EnrollCode.OK, rec.enrolled_at, "")

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="verifier", daemon=True)
        t.start()
        return t
