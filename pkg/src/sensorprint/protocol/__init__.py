"""Enrollment and authentication protocol between device agents and a verifier."""

from .agent import DeviceAgent, VerifierClient, run_auth_session
from .messages import AuthAttempt, AuthOutcome, AuthStatus, EnrollmentRecord
from .registry import Registry
from .server import VerifierServer
from .verifier import Verifier, verify

__all__ = [
    "AuthAttempt",
    "AuthOutcome",
    "AuthStatus",
    "DeviceAgent",
    "EnrollmentRecord",
    "Registry",
    "Verifier",
    "VerifierClient",
    "VerifierServer",
    "run_auth_session",
    "verify",
]
