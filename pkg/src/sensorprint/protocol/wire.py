"""Length-prefixed binary framing between device agents and the verifier.

Frame layout (all integers big-endian)::

    u32   length    number of bytes that follow (type byte + payload)
    u8    type      message type, see ``MsgType``
    ...   payload   fixed-order fields of that message

Field encodings: ``str`` is a u16 byte count followed by UTF-8 bytes,
``blob`` a u32 byte count followed by raw bytes, ``f64`` an IEEE-754
double, ``i64`` a signed 64-bit integer.

    ENROLL_REQ   str device_id, f64 theta, u32 P, u32 max_retries,
                 blob fingerprint (version-1 fingerprint file text)
    ENROLL_RESP  u8 code, i64 enrolled_at, str message
    AUTH_REQ     str device_id, i64 timestamp, u32 attempt_index,
                 u32 n_points, n_points x (f64 frequency_hz, f64 rms)
    AUTH_RESP    u8 status, u8 has_epsilon, f64 epsilon, u32 attempts_used
    ERROR        u16 code, str message
"""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass
from typing import Union

from ..errors import ProtocolError, TransportError
from .messages import AuthAttempt, AuthOutcome, AuthStatus

MAX_FRAME = 16 * 1024 * 1024
_LEN = struct.Struct(">I")


class MsgType(enum.IntEnum):
    ENROLL_REQ = 0x01
    ENROLL_RESP = 0x02
    AUTH_REQ = 0x03
    AUTH_RESP = 0x04
    ERROR = 0x7F


class EnrollCode(enum.IntEnum):
    OK = 0
    DUPLICATE_DEVICE = 1
    CORRUPT_FINGERPRINT = 2
    INVALID_REQUEST = 3


class ErrorCode(enum.IntEnum):
    MALFORMED_FRAME = 1
    UNSUPPORTED_TYPE = 2
    INTERNAL = 3


@dataclass(frozen=True)
class EnrollRequest:
    device_id: str
    theta: float
    P: int
    max_retries: int
    fingerprint_text: str


@dataclass(frozen=True)
class EnrollResponse:
    code: EnrollCode
    enrolled_at: int = 0
    message: str = ""


@dataclass(frozen=True)
class ErrorMessage:
    code: ErrorCode
    message: str = ""


Message = Union[EnrollRequest, EnrollResponse, AuthAttempt, AuthOutcome, ErrorMessage]


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v):
        self.parts.append(struct.pack(">B", v))

    def u16(self, v):
        self.parts.append(struct.pack(">H", v))

    def u32(self, v):
        self.parts.append(struct.pack(">I", v))

    def i64(self, v):
        self.parts.append(struct.pack(">q", v))

    def f64(self, v):
        self.parts.append(struct.pack(">d", v))

    def str(self, s: str):
        b = s.encode("utf-8")
        if len(b) > 0xFFFF:
            raise ProtocolError("string field longer than 65535 bytes")
        self.u16(len(b))
        self.parts.append(b)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(b)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise ProtocolError("truncated payload")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def _unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self._take(s.size))[0]

    def u8(self):
        return self._unpack(">B")

    def u16(self):
        return self._unpack(">H")

    def u32(self):
        return self._unpack(">I")

    def i64(self):
        return self._unpack(">q")

    def f64(self):
        return self._unpack(">d")

    def str(self) -> str:
        n = self.u16()
        try:
            return bytes(self._take(n)).decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("invalid UTF-8 in string field") from None

    def blob(self) -> bytes:
        return bytes(self._take(self.u32()))

    def done(self):
        if self.pos != len(self.data):
            raise ProtocolError(f"{len(self.data) - self.pos} trailing bytes in payload")


def encode_payload(msg: Message) -> tuple[MsgType, bytes]:
    w = _Writer()
    if isinstance(msg, EnrollRequest):
        w.str(msg.device_id)
        w.f64(msg.theta)
        w.u32(msg.P)
        w.u32(msg.max_retries)
        w.blob(msg.fingerprint_text.encode("utf-8"))
        return MsgType.ENROLL_REQ, w.getvalue()
    if isinstance(msg, EnrollResponse):
        w.u8(msg.code)
        w.i64(msg.enrolled_at)
        w.str(msg.message)
        return MsgType.ENROLL_RESP, w.getvalue()
    if isinstance(msg, AuthAttempt):
        w.str(msg.device_id)
        w.i64(msg.timestamp)
        w.u32(msg.attempt_index)
        w.u32(len(msg.points))
        for f, x in msg.points:
            w.f64(f)
            w.f64(x)
        return MsgType.AUTH_REQ, w.getvalue()
    if isinstance(msg, AuthOutcome):
        w.u8(msg.status)
        w.u8(msg.epsilon is not None)
        w.f64(msg.epsilon if msg.epsilon is not None else 0.0)
        w.u32(msg.attempts_used)
        return MsgType.AUTH_RESP, w.getvalue()
    if isinstance(msg, ErrorMessage):
        w.u16(msg.code)
        w.str(msg.message)
        return MsgType.ERROR, w.getvalue()
    raise TypeError(f"cannot encode {type(msg).__name__}")


def decode_payload(mtype: int, payload: bytes) -> Message:
    r = _Reader(payload)
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise ProtocolError(f"unknown message type 0x{mtype:02x}") from None
    try:
        if mtype is MsgType.ENROLL_REQ:
            msg = EnrollRequest(r.str(), r.f64(), r.u32(), r.u32(), r.blob().decode("utf-8"))
        elif mtype is MsgType.ENROLL_RESP:
            msg = EnrollResponse(EnrollCode(r.u8()), r.i64(), r.str())
        elif mtype is MsgType.AUTH_REQ:
            device_id, ts, idx, n = r.str(), r.i64(), r.u32(), r.u32()
            if n * 16 > len(payload):
                raise ProtocolError("point count exceeds payload size")
            points = tuple((r.f64(), r.f64()) for _ in range(n))
            msg = AuthAttempt(device_id, ts, points, idx)
        elif mtype is MsgType.AUTH_RESP:
            status, has_eps, eps, used = AuthStatus(r.u8()), r.u8(), r.f64(), r.u32()
            msg = AuthOutcome(status, eps if has_eps else None, used)
        else:
            msg = ErrorMessage(ErrorCode(r.u16()), r.str())
    except (ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, ProtocolError):
            raise
        raise ProtocolError(f"bad {mtype.name} payload: {exc}") from None
    r.done()
    return msg


def encode_frame(msg: Message) -> bytes:
    mtype, payload = encode_payload(msg)
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError("frame too large")
    return _LEN.pack(len(payload) + 1) + bytes([mtype]) + payload


def decode_frame(frame: bytes) -> Message:
    if len(frame) < _LEN.size + 1:
        raise ProtocolError("frame shorter than its header")
    (length,) = _LEN.unpack_from(frame)
    if length != len(frame) - _LEN.size:
        raise ProtocolError(f"length field {length} does not match frame size {len(frame) - _LEN.size}")
    return decode_payload(frame[_LEN.size], frame[_LEN.size + 1:])


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Message:
    """Read one frame; raises ``EOFError`` on a clean close before a header."""
    (length,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"invalid frame length {length}")
    body = _recv_exact(sock, length)
    return decode_payload(body[0], body[1:])


def write_frame(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode_frame(msg))


def request(sock: socket.socket, msg: Message) -> Message:
    try:
        write_frame(sock, msg)
        return read_frame(sock)
    except (OSError, EOFError) as exc:
        raise TransportError(f"verifier link failed: {exc}") from exc
