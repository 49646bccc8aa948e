"""Exception types shared across the package.

The CLI maps these onto stable exit codes (see ``tripletdiff.cli``).
"""


class TripletDiffError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(TripletDiffError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class ContractError(ConfigError):
    """Shapes, widths or stage settings that do not fit together."""


class DataError(TripletDiffError, ValueError):
    """Malformed input data: annotation files, tables, images, prompts."""

    exit_code = 3


class FormatError(DataError):
    """A file does not follow the expected layout."""


class LookupFailure(DataError, KeyError):
    """An id or caption that cannot be resolved."""

    def __str__(self):  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class NumericError(TripletDiffError, ArithmeticError):
    """Non-finite values or numeric breakdowns during compute."""

    exit_code = 4


class EvaluationError(DataError):
    """Feature extraction or scoring failed for a specific input."""
