"""Exception hierarchy shared by every adahi module."""


class AdahiError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(AdahiError, ValueError):
    """A caller broke an operation's precondition (shape, range, state)."""


class ConfigError(AdahiError, ValueError):
    """Invalid or incomplete configuration."""


class CalibrationError(AdahiError):
    """Calibration data is too small or degenerate to fit."""


class InversionError(AdahiError):
    """A rejection model cannot be inverted for the requested probability."""


class ProtocolError(AdahiError):
    """Malformed wire payload; ``field`` names the offending field."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class SerializationError(AdahiError, ValueError):
    """A value cannot be represented in the canonical wire format."""


class TransportError(AdahiError):
    """Base class for failures talking to the verification server."""


class TransportTimeout(TransportError):
    pass


class ConnectionRefused(TransportError):
    pass


class ServerStatusError(TransportError):
    """The server answered, but not with status ``ok``."""

    def __init__(self, message: str, status: str):
        super().__init__(message)
        self.status = status


class ReportError(AdahiError):
    """Metrics were requested over an empty set of records."""
