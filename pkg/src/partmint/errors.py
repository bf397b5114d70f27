"""Exception and warning types shared across the package."""


class PartmintError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(PartmintError, ValueError):
    """Shapes of two inputs are incompatible (kernel depth vs. feature depth, ...)."""


class NumericError(PartmintError, RuntimeError):
    """A computation produced a non-finite value."""


class DataFormatError(PartmintError):
    """A file or document does not conform to its declared format."""


class BadMagicError(DataFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(DataFormatError):
    """Recognized file family, but an unsupported format version."""


class TruncatedFileError(DataFormatError):
    """File ends before the declared payload is complete."""


class TrailingDataError(DataFormatError):
    """File contains bytes beyond the declared payload."""


class DimensionOverflowError(DataFormatError):
    """Declared tensor dimensions are zero or exceed the size bound."""


class NonFiniteValueError(DataFormatError):
    """Payload contains NaN or infinite values."""


class DegenerateDetectorWarning(UserWarning):
    """A detector produced (near-)constant scores during calibration."""
