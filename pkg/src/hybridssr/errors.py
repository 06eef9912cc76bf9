"""Exception types shared across the package.

The CLI maps these onto exit codes and machine-parsable stderr prefixes:
data/config problems exit 1, numerical degeneracies exit 2.
"""


class HybridSSRError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DataValidationError(HybridSSRError):
    """Malformed input: bad dataset, bad config, violated precondition."""

    exit_code = 1
    code = "validation"


class NumericalError(HybridSSRError):
    """Numerically degenerate situation: singular design, zero variance, ..."""

    exit_code = 2
    code = "numeric"


class HistoricalPoolExhausted(NumericalError):
    """Requested more historical controls than exist.

    Carries the shortfall so callers that are allowed to cap the draw
    (the simulation engine) can do so.
    """

    code = "pool-exhausted"

    def __init__(self, requested, available):
        self.requested = requested
        self.available = available
        self.shortfall = requested - available
        super().__init__(
            f"historical pool exhausted: requested {requested}, "
            f"available {available} (shortfall {self.shortfall})"
        )
