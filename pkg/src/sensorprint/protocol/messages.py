from __future__ import annotations

import enum
from dataclasses import dataclass


class AuthStatus(enum.IntEnum):
    ACCEPTED = 0
    REJECTED = 1
    RETRY = 2
    REPLAY_REJECTED = 3
    UNKNOWN_DEVICE = 4
    MALFORMED_CHALLENGE_SET = 5


@dataclass(frozen=True)
class AuthAttempt:
    """Partial-fingerprint responses sent by a device for one timestamp."""

    device_id: str
    timestamp: int
    points: tuple[tuple[float, float], ...]
    attempt_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(f), float(x)) for f, x in self.points))
        object.__setattr__(self, "timestamp", int(self.timestamp))


@dataclass(frozen=True)
class AuthOutcome:
    status: AuthStatus
    epsilon: float | None = None
    attempts_used: int = 0

    @property
    def accepted(self) -> bool:
        return self.status is AuthStatus.ACCEPTED


@dataclass(frozen=True)
class EnrollmentRecord:
    device_id: str
    fingerprint_file: str
    enrolled_at: int
    theta: float
    P: int
    max_retries: int
