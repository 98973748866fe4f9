"""Exception hierarchy shared across the package."""


class FpcrError(Exception):
    """Base class for all package errors."""


class DimensionError(FpcrError, ValueError):
    """Curves or operators live on different grids, or shapes disagree."""


class TruncationError(FpcrError, ValueError):
    """A truncation level exceeds the numerical rank of the spectrum."""

    def __init__(self, message, max_admissible=None):
        super().__init__(message)
        self.max_admissible = max_admissible


class InvalidOperatorError(FpcrError, ValueError):
    """Operator is not symmetric (or not PSD) within tolerance."""


class DomainError(FpcrError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class IntervalError(FpcrError, RuntimeError):
    """No usable bootstrap replicates were left to form an interval."""


class DataValidationError(FpcrError, ValueError):
    """Malformed input data (ragged rows, non-numeric cells, too few rows)."""


class ExperimentAborted(FpcrError, RuntimeError):
    """Too many Monte Carlo repetitions failed for the result to be trusted."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows
