"""Exception types shared across the toolkit."""


class DriftAuditError(Exception):
    """Base class for all toolkit errors."""


class InsufficientDataError(DriftAuditError):
    """A sample is too small for the requested statistic or operation."""


class InvalidParameterError(DriftAuditError):
    """A configuration value is outside its legal range."""


class InvalidRecordError(DriftAuditError):
    """A confidence record violates its invariants (bad confidence, bad probs)."""


class CalibrationError(DriftAuditError):
    """Threshold calibration could not complete (e.g. every null stream removed)."""


class DetectorStateError(DriftAuditError):
    """Illegal use of a streaming detector (e.g. push after detection)."""
