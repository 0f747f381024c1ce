"""Exception types shared across the package."""


class LatentDriveError(Exception):
    pass


class DimensionError(LatentDriveError):
    """Shape or dimension mismatch between operands."""


class NumericError(LatentDriveError):
    """NaN/Inf encountered where finite values are required."""


class ConsistencyError(LatentDriveError):
    """Internal bookkeeping mismatch (e.g. missing gradient for a live parameter)."""


class GenerationError(LatentDriveError):
    """Episode generation exhausted its retry budget."""


class FormatError(LatentDriveError):
    """Malformed dataset/checkpoint file (bad magic, version, truncation, checksum)."""


class ConfigError(LatentDriveError):
    """Invalid or inconsistent run configuration."""


class UsageError(LatentDriveError):
    """Bad CLI invocation (exit code 2)."""
