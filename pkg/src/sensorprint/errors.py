"""Exception hierarchy shared across the package."""


class SensorprintError(Exception):
    """Base class for all errors raised by sensorprint."""


class SignalError(SensorprintError, ValueError):
    pass


class NyquistViolation(SignalError):
    pass


class InsufficientSampling(SignalError):
    """Fewer than the minimum number of samples per period were requested."""


class RangeViolation(SignalError):
    pass


class EmptyWaveform(SignalError):
    pass


class CaptureFormatError(SignalError):
    pass


class OutOfOperatingRange(SensorprintError, ValueError):
    pass


class ModelFileError(SensorprintError, ValueError):
    pass


class InvalidP(SensorprintError, ValueError):
    pass


class FrequencyNotInGrid(SensorprintError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class CorruptFingerprint(SensorprintError, ValueError):
    pass


class MissingFrequency(SensorprintError, ValueError):
    pass


class DuplicateDevice(SensorprintError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class RegistryError(SensorprintError, RuntimeError):
    """Storage fault inside the verifier's registry."""


class ProtocolError(SensorprintError, ValueError):
    """A wire frame could not be decoded."""


class TransportError(SensorprintError, ConnectionError):
    """The link to the verifier failed; no attempt was consumed."""

    def __init__(self, message: str, attempts_used: int = 0):
        super().__init__(message)
        self.attempts_used = attempts_used


class ConfigError(SensorprintError, ValueError):
    pass
