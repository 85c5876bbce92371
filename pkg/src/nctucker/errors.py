"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array or tensor has dimensions incompatible with an operation."""


class ConfigError(ValueError):
    """A hyperparameter setting is invalid for the given data."""


class DataFormatError(ValueError):
    """A data file violates the expected text format (message carries the line)."""


class NormalizationError(ValueError):
    """Per-slice normalization cannot proceed (e.g. a slice has no entries)."""


class ModelArchiveError(RuntimeError):
    """A persisted model is unreadable, corrupt, or of an unsupported version."""


class DivergenceError(RuntimeError):
    """Training produced non-finite parameters."""
