"""Exception hierarchy shared across the package, with process exit codes."""


class JetError(Exception):
    """Base class for every error this package raises deliberately."""

    exit_code = 1


class ConfigError(JetError):
    """Invalid configuration: bad geometry, unknown keys, inconsistent settings."""

    exit_code = 2


class DataFormatError(JetError):
    """Malformed dataset or checkpoint bytes, or a missing data file."""

    exit_code = 3


class NumericError(JetError):
    """Non-finite values or other numeric failure; the message names the location."""

    exit_code = 4


class DimensionError(JetError):
    """Operand shapes incompatible with the requested operation."""


class DTypeError(JetError):
    """Operand float widths disagree where they are required to match."""


class UsageError(JetError):
    """An operation was invoked outside its contract."""


# Exit code reserved for `jet verify` reporting at least one failed check.
VERIFY_FAILURE_EXIT = 5
