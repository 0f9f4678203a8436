"""Errors and warnings shared across the package."""


class SsmfError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(SsmfError, ValueError):
    """Operands have incompatible dimensions."""


class InvalidRank(SsmfError, ValueError):
    """Requested topic count exceeds what the data supports."""


class StepSearchExhausted(SsmfError, RuntimeError):
    """Step-size search hit the substep cap without an acceptable step."""


class EmptyVocabulary(SsmfError, ValueError):
    """No term survived the document-frequency filter."""


class WeightingError(SsmfError, ValueError):
    """Matrix weighting does not match what the operation expects."""


class OutOfRangeRating(SsmfError, ValueError):
    """A rating falls outside 1..n_levels."""


class DegenerateLevel(SsmfError, ValueError):
    """Some rating level has no observations eligible for its block."""


class SchemaError(SsmfError, ValueError):
    """Input file violates the declared schema.

    ``row`` is the 1-based data row at fault, or None for header problems.
    """

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class UnknownGroupKey(SsmfError, KeyError):
    """No fitted coefficients apply to the requested (time, app) cell."""


class LengthMismatch(SsmfError, ValueError):
    """Paired sequences have different lengths."""


class UnknownKeyword(SsmfError, KeyError):
    """A topic keyword is missing from the vocabulary or never occurs."""


class RowSumViolation(SsmfError, ValueError):
    """Rows of a proportion matrix do not sum to one."""


class RankDeficientWarning(UserWarning):
    """Reduced design lost column rank; a minimum-norm solve was used."""


class DegenerateLevelWarning(UserWarning):
    """A (time, app) cell had rating levels with no eligible observations."""


class SeparationWarning(UserWarning):
    """Logistic fit hit (quasi-)separation; ridge-stabilized fit returned."""


class NegativeStatisticWarning(UserWarning):
    """A likelihood-ratio statistic came out negative (optimization noise)."""
