"""Module defining the exceptions raised by typegram."""

from typing import Optional


class TypegramError(Exception):
    """Base class for every typegram error."""


class InputError(TypegramError, ValueError):
    """Raised for malformed or inconsistent user-supplied input."""


class ConfigError(InputError):
    """Raised when a configuration file or value is invalid."""


class CorpusError(InputError):
    """Raised when a corpus or library file cannot be loaded.

    Args:
        message (str): What went wrong.
        path (str, optional): File being read.
        line (int, optional): 1-based line number of the offending record.

    """

    def __init__(
        self, message: str, path: Optional[str] = None, line: Optional[int] = None
    ):
        """Initialize corpus error with its location."""
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(location + message)


class LayoutError(CorpusError):
    """Raised when a struct layout violates its ordering or width rules."""


class EmptyCorpusError(InputError):
    """Raised when no training function matches the requested build."""


class DatabaseFormatError(InputError):
    """Raised on bad magic bytes, version mismatch, truncation or checksum failure."""


class ParameterMismatchError(InputError):
    """Raised when databases disagree on n, bitness, vocabulary or labels."""


class BitnessMismatchError(InputError):
    """Raised when a function is queried against an ensemble of other bitness."""


class VocabularyMismatchError(InputError):
    """Raised when a type query hits a signature ensemble or vice versa."""
