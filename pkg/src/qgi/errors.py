"""Exception hierarchy shared across the package."""


class QGIError(Exception):
    """Base class for all package errors."""


class ConfigError(QGIError, ValueError):
    """Invalid configuration value, unknown key, or unsupported state."""


class NumericalError(QGIError, ArithmeticError):
    """A numerical routine failed or left its domain of validity."""


class SingularFieldError(NumericalError):
    """Field evaluated inside a conductor cross-section."""


class ScheduleError(ConfigError):
    """Pulse schedule violates its timing preconditions."""


class HardwareEnvelopeError(ScheduleError):
    """Requested current exceeds the configured source limit."""


class CalibrationError(NumericalError):
    """Root bracket for a calibration does not contain a sign change."""


class AlignmentError(NumericalError):
    """Two time series cannot be brought onto a common grid."""


class ExtractionError(NumericalError):
    """Fringe analysis could not find enough oscillations or failed to unwrap."""


class IllConditionedFitError(NumericalError):
    """Fit data do not constrain the requested parameters."""
