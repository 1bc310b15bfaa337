"""Exception types shared across the package.

Every error the CLI reports as machine-readable JSON derives from
:class:`UpaError`; the class name doubles as the error code.
"""


class UpaError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(UpaError):
    """Operands have incompatible shapes; the message names both."""


class ConfigError(UpaError):
    """A configuration value violates a precondition."""


class ContractError(UpaError):
    """A runtime contract was violated (non-scalar loss, bad row sums, ...)."""


class NumericError(UpaError):
    """Non-finite values where finite ones are required (NaN loss, ...)."""


class IndexRangeError(UpaError, IndexError):
    """An index is outside the valid range of its target."""


class FormatError(UpaError):
    """A binary or text file does not match its declared layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
