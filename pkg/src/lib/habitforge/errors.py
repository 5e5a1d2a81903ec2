"""
Exception hierarchy for habitforge.

Every error raised on purpose by the toolkit derives from HabitForgeError so the
command line can tell toolkit failures from programming errors.
"""


class HabitForgeError(Exception):
    """Base class for all toolkit errors."""


class ParseError(HabitForgeError, ValueError):
    """A CSV cell or header could not be parsed."""

    def __init__(self, message, row=None, column=None):
        """
        Args:
            message: What went wrong
            row: 1-based data row number (header excluded), if known
            column: Column name, if known
        """
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        prefix = ", ".join(location)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.row = row
        self.column = column


class ValidationError(HabitForgeError, ValueError):
    """Well-formed data that violates an invariant."""


class DomainError(HabitForgeError, ValueError):
    """A value outside an operation's domain."""


class EstimationError(HabitForgeError):
    """A statistical estimate cannot be formed."""


class MatchingError(EstimationError):
    """Propensity matching cannot proceed."""


class SchemeError(HabitForgeError, ValueError):
    """A binarization scheme cannot be applied to the given values."""


class SpecError(HabitForgeError, ValueError):
    """A synthetic generator spec is infeasible."""


class TreatmentLookupError(HabitForgeError, LookupError):
    """A treatment is not defined where it was looked up."""


class ConfigError(HabitForgeError, ValueError):
    """Invalid run configuration."""
