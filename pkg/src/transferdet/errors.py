"""Exception hierarchy shared by every module."""


class DetectorError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DetectorError):
    """Inconsistent shapes, network descriptions or run settings."""


class DataError(DetectorError):
    """Malformed annotations, manifests or datasets."""


class SurgeryError(DetectorError):
    """Source weights cannot be transplanted into the target network."""


class WeightsFormatError(DetectorError):
    """Bad magic, version, truncation or dimension mismatch in a weights file."""


class DivergenceError(DetectorError):
    """Training produced non-finite values or exhausted its recovery budget."""
