"""
Error Types

Exception hierarchy shared by the core modules. The tools layer maps each
class to a process exit code.
"""


class HiddenOrderError(Exception):
    """Base class for all package errors"""

    exit_code = 1


class ConfigError(HiddenOrderError, ValueError):
    """Invalid or inconsistent run configuration"""

    exit_code = 2


class DomainError(HiddenOrderError, ValueError):
    """Input outside the domain of an operation"""

    exit_code = 3


class DataError(DomainError):
    """Malformed input data (CSV rows, calendars, segment files)"""


class GuardError(DomainError):
    """Refused because the requested computation is too large"""


class NumericError(HiddenOrderError, RuntimeError):
    """Numerical failure during fitting or estimation"""

    exit_code = 4


def exit_code_for(error: BaseException) -> int:
    """Exit code for an exception raised anywhere in a run"""
    if isinstance(error, HiddenOrderError):
        return error.exit_code
    if isinstance(error, (FileNotFoundError, PermissionError)):
        return ConfigError.exit_code
    return NumericError.exit_code
