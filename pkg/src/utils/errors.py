"""
Exception hierarchy for Cascade and the mapping from exceptions to CLI exit codes.
"""
import logging
from typing import Optional

logger = logging.getLogger('Cascade.Errors')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CascadeError(Exception):
    """Base class for every error raised deliberately by Cascade."""
    exit_code = EXIT_RUNTIME


class UsageError(CascadeError):
    """Raised when a caller violates an operation's precondition."""
    exit_code = EXIT_USAGE


class ConfigError(UsageError):
    """Raised when a configuration file cannot be loaded or fails validation."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        location = []
        if key is not None:
            location.append(f"key '{key}'")
        if line is not None:
            location.append(f"line {line}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
        self.key = key
        self.line = line


class CorpusError(UsageError):
    """Raised when a corpus directory or manifest is missing or unreadable."""


class NumericError(CascadeError):
    """Raised when a computation produces non-finite values."""

    def __init__(self, message: str, task: Optional[str] = None):
        super().__init__(f"[{task}] {message}" if task else message)
        self.task = task


class CheckpointError(CascadeError):
    """Raised when a checkpoint cannot be loaded (magic, version, digest, integrity)."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class LatticeParseError(CascadeError):
    """Raised when a lattice file is malformed."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class SkipExample(Exception):
    """
    Non-fatal signal that an example contributes nothing to a loss.

    Raised by BEST-RQ masking when an utterance is too short to hold a span,
    and by the BEST-RQ loss when no frame is masked.
    """

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to the CLI exit-code contract.

    Args:
        exc: The exception that ended the command

    Returns:
        1 for usage errors, 2 for runtime/numeric failures and anything unexpected
    """
    if isinstance(exc, CascadeError):
        return exc.exit_code
    logger.debug(f"Unexpected exception type {type(exc).__name__} mapped to runtime failure")
    return EXIT_RUNTIME
