"""Exception types shared across the toolkit."""


class XcmineError(Exception):
    """Base class for all toolkit errors."""


class FormatError(XcmineError):
    """A file does not follow the expected layout (bad header, row count mismatch)."""


class RangeError(XcmineError):
    """An id (feature, label, or point) falls outside the declared range."""


class ConfigError(XcmineError):
    """A configuration value is inconsistent or unusable."""


class NumericsError(XcmineError):
    """A numeric quantity became non-finite where finiteness is required."""


class DegenerateInput(XcmineError):
    """An input has no usable content (empty vector, zero norm, no positive pairs)."""


class NormError(XcmineError):
    """A vector that must be unit length is not."""
