"""Exception hierarchy.

The CLI maps :class:`DataError` subclasses to exit code 2 and
:class:`NumericError` to exit code 3.
"""

from __future__ import annotations


class TickguardError(Exception):
    """Base class for all package errors."""


class DataError(TickguardError):
    """Input data is malformed, inconsistent or incompatible."""


class MatchParseError(DataError):
    """A match file could not be parsed."""

    def __init__(self, path, line: int | None, message: str) -> None:
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class MatchValidationError(DataError):
    """A parsed match violates one of the MatchRecord invariants."""

    def __init__(self, invariant: str, detail: str = "") -> None:
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class FeatureError(DataError):
    """A value cannot be encoded (unknown weapon, unknown map, non-finite input)."""


class WindowError(DataError):
    """A context window cannot be extracted for a kill."""


class DataGapError(WindowError):
    """A player has no tick row at an in-range tick inside a window."""


class CompatibilityError(DataError):
    """Schema hash or format version does not match."""


class IntegrityError(DataError):
    """File is truncated or fails its checksum."""


class NumericError(TickguardError):
    """Non-finite values appeared during a numeric computation."""
