"""Verifier-side decision logic."""

from __future__ import annotations

import math

from ..fingerprint import PartialFingerprint, match, schedule_challenges
from .messages import AuthAttempt, AuthOutcome, AuthStatus
from .registry import Registry

DEFAULT_FRESHNESS = 30


def verify(registry: Registry, attempt: AuthAttempt, now: int, freshness_window: int = DEFAULT_FRESHNESS) -> AuthOutcome:
    """Check one authentication attempt against the registry.

    Order of checks: unknown device, stale or reused timestamp, challenge-set
    mismatch, then RMSE matching. Only attempts that reach matching consume
    their timestamp, so a malformed submission cannot burn a slot for the
    genuine device.
    """
    rec = registry.get(attempt.device_id)
    used = attempt.attempt_index
    if rec is None:
        return AuthOutcome(AuthStatus.UNKNOWN_DEVICE, None, used)
    fp = registry.fingerprint(attempt.device_id)
    with registry.device_lock(attempt.device_id):
        if abs(int(now) - attempt.timestamp) > freshness_window or registry.is_consumed(attempt.device_id, attempt.timestamp):
            return AuthOutcome(AuthStatus.REPLAY_REJECTED, None, used)
        expected = schedule_challenges(attempt.timestamp, attempt.device_id, rec.P, fp.grid)
        got = [f for f, _ in attempt.points]
        if len(got) != len(expected) or any(a != b for a, b in zip(got, expected)):
            return AuthOutcome(AuthStatus.MALFORMED_CHALLENGE_SET, None, used)
        if not all(math.isfinite(x) for _, x in attempt.points):
            return AuthOutcome(AuthStatus.MALFORMED_CHALLENGE_SET, None, used)
        registry.consume(attempt.device_id, attempt.timestamp)
    result = match(fp, PartialFingerprint(attempt.device_id, attempt.points, attempt.timestamp), rec.theta)
    if result.accepted:
        status = AuthStatus.ACCEPTED
    elif used < rec.max_retries:
        status = AuthStatus.RETRY
    else:
        status = AuthStatus.REJECTED
    return AuthOutcome(status, result.epsilon, used)


class Verifier:
    """In-process verifier bound to a registry."""

    def __init__(self, registry: Registry, freshness_window: int = DEFAULT_FRESHNESS):
        self.registry = registry
        self.freshness_window = freshness_window

    def submit(self, attempt: AuthAttempt, now: int) -> AuthOutcome:
        return verify(self.registry, attempt, now, self.freshness_window)
