"""Device-side agent, remote verifier client and the retry loop."""

from __future__ import annotations

import socket
import threading
from typing import Protocol

from ..errors import ProtocolError, TransportError
from ..fingerprint import (
    DEFAULT_P,
    FrequencyGrid,
    FullFingerprint,
    dumps_fingerprint,
    extract_partial,
    schedule_challenges,
)
from ..sensors import Challenge, Environment, RespondFn
from . import wire
from .messages import AuthAttempt, AuthOutcome, AuthStatus, EnrollmentRecord

# Upper bound on attempts a session will make, whatever the verifier says.
MAX_SESSION_ATTEMPTS = 16


class Submitter(Protocol):
    def submit(self, attempt: AuthAttempt, now: int) -> AuthOutcome: ...


class DeviceAgent:
    """Measures the partial fingerprint the verifier expects for a timestamp."""

    def __init__(
        self,
        device_id: str,
        respond_fn: RespondFn,
        challenge_template: Challenge,
        env: Environment | None = None,
        P: int = DEFAULT_P,
        grid: FrequencyGrid | None = None,
    ):
        self.device_id = device_id
        self.respond_fn = respond_fn
        self.challenge_template = challenge_template
        self.env = env or Environment()
        self.P = P
        self.grid = grid or FrequencyGrid()

    def attempt(self, timestamp: int, attempt_index: int = 1) -> AuthAttempt:
        freqs = schedule_challenges(timestamp, self.device_id, self.P, self.grid)
        partial = extract_partial(self.respond_fn, freqs, self.challenge_template, self.env, timestamp, self.device_id)
        return AuthAttempt(self.device_id, timestamp, partial.points, attempt_index)


def run_auth_session(agent: DeviceAgent, verifier: Submitter, device_id: str | None = None, now: int = 0) -> AuthOutcome:
    """Authenticate until accepted or the verifier stops asking for retries.

    Attempt ``k`` (1-based) uses timestamp ``now + k - 1``. A transport
    failure raises :class:`TransportError` carrying the number of attempts
    that were actually answered.
    """
    if device_id is not None and device_id != agent.device_id:
        raise ValueError(f"agent is bound to {agent.device_id!r}, not {device_id!r}")
    outcome = AuthOutcome(AuthStatus.REJECTED, None, 0)
    for k in range(1, MAX_SESSION_ATTEMPTS + 1):
        ts = now + k - 1
        attempt = agent.attempt(ts, k)
        try:
            outcome = verifier.submit(attempt, ts)
        except TransportError as exc:
            exc.attempts_used = k - 1
            raise
        if outcome.status is not AuthStatus.RETRY:
            return outcome
    return AuthOutcome(AuthStatus.REJECTED, outcome.epsilon, outcome.attempts_used)


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {addr!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


class VerifierClient:
    """Connection to a remote verifier speaking the framed wire protocol.

    ``now`` arguments are ignored; the verifier judges freshness by its own
    clock.
    """

    def __init__(self, address: str | tuple[str, int], timeout: float = 10.0):
        self.address = parse_address(address) if isinstance(address, str) else address
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            except OSError as exc:
                raise TransportError(f"cannot reach verifier at {self.address[0]}:{self.address[1]}: {exc}") from exc
        return self._sock

    def _request(self, msg):
        with self._lock:
            sock = self._connect()
            try:
                reply = wire.request(sock, msg)
            except (TransportError, ProtocolError):
                self.close()
                raise
        if isinstance(reply, wire.ErrorMessage):
            raise ProtocolError(f"verifier error {reply.code.name}: {reply.message}")
        return reply

    def submit(self, attempt: AuthAttempt, now: int | None = None) -> AuthOutcome:
        reply = self._request(attempt)
        if not isinstance(reply, AuthOutcome):
            raise ProtocolError(f"expected AUTH_RESP, got {type(reply).__name__}")
        return reply

    def enroll(self, device_id: str, fingerprint: FullFingerprint, theta: float, P: int, max_retries: int) -> wire.EnrollResponse:
        reply = self._request(wire.EnrollRequest(device_id, theta, P, max_retries, dumps_fingerprint(fingerprint)))
        if not isinstance(reply, wire.EnrollResponse):
            raise ProtocolError(f"expected ENROLL_RESP, got {type(reply).__name__}")
        return reply

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


__all__ = [
    "DeviceAgent",
    "EnrollmentRecord",
    "VerifierClient",
    "parse_address",
    "run_auth_session",
]
