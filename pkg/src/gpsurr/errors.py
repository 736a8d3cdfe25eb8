"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: DataError -> 3,
NumericalError -> 4 (usage errors exit 2 via argparse).
"""


class GpsurrError(Exception):
    """Base class for all package errors."""


class DataError(GpsurrError):
    """Invalid inputs, malformed files, or schema violations."""


class NumericalError(GpsurrError):
    """Linear-algebra failure or optimizer divergence."""

    def __init__(self, message, attempted_jitter=None, state=None):
        super().__init__(message)
        self.attempted_jitter = attempted_jitter
        self.state = state
