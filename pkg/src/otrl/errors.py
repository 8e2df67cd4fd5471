"""Exception types shared across the package.

Every error raised by otrl derives from :class:`OtrlError`, so callers can
catch the whole family with one clause. ``InvalidInputError`` additionally
subclasses ``ValueError`` for callers that only know stdlib exceptions.
"""


class OtrlError(Exception):
    """Base class for all otrl errors."""


class InvalidInputError(OtrlError, ValueError):
    """An argument violates a precondition (shape, range, normalization)."""


class SolverFailureError(OtrlError):
    """The exact transport solver exhausted its pivot budget."""

    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class ConvergenceFailureError(OtrlError):
    """An iterative method hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(
            f"{message} (residual {residual:.3e} after {iterations} iterations)"
        )
        self.residual = residual
        self.iterations = iterations


class EnumerationTooLargeError(OtrlError):
    """The deterministic-policy space exceeds the brute-force guard."""


class GridParseError(OtrlError):
    """A gridworld map is malformed; carries the offending location."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        loc = ""
        if row is not None:
            loc = f" at row {row}" + (f", column {col}" if col is not None else "")
        super().__init__(message + loc)
        self.row = row
        self.col = col


class ConfigError(OtrlError):
    """A run configuration file is missing, unreadable, or invalid."""


class TrainingAbortedError(OtrlError):
    """A training run hit a non-recoverable state (NaN values, solver failure)."""
