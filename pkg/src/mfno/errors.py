"""Exception hierarchy shared by all mfno modules.

The CLI maps these onto process exit codes: config problems exit 2, data
and file-format problems exit 3, numeric failures exit 4.
"""


class MfnoError(Exception):
    """Base class for all package errors."""


class ConfigError(MfnoError, ValueError):
    """Invalid configuration value or malformed config file."""


class ShapeError(MfnoError, ValueError):
    """Tensor shape or operator precondition violated."""


class DataError(MfnoError, ValueError):
    """Missing, inconsistent, or degenerate data."""


class FormatError(DataError):
    """Malformed binary or text artifact."""


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File carries an unsupported format version."""


class TruncatedError(FormatError):
    """File ended before the declared payload was complete."""


class CrcMismatchError(FormatError):
    """Stored CRC32 does not match the file contents."""


class DigestMismatchError(DataError):
    """File content does not reproduce the digest recorded in a manifest."""


class NumericError(MfnoError, RuntimeError):
    """Non-finite values, solver divergence, or step-size failure."""


class ConvergenceError(NumericError):
    """Iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class CflError(NumericError):
    """Requested transport step exceeds the stable step bound."""

    def __init__(self, message, dt_limit):
        super().__init__(message)
        self.dt_limit = dt_limit
