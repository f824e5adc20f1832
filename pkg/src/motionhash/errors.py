"""Exception hierarchy shared across the package.

Two broad classes matter to callers: data-level problems (bad signals,
bad files, bad ids) and numeric faults (non-finite values, stale caches).
The CLI maps them to distinct exit codes.
"""


class MotionHashError(Exception):
    """Base class for every error raised by this package."""


class DataError(MotionHashError):
    """Invalid input data, file contents, or database state."""


class NumericError(MotionHashError):
    """Numerical fault during network evaluation or training."""


class SignalTooShort(DataError):
    pass


class DegenerateSignal(DataError):
    pass


class SeparationUnreachable(DataError):
    pass


class TooFewSignals(DataError):
    pass


class DuplicateId(DataError):
    pass


class UnknownId(DataError):
    pass


class EmptyDatabase(DataError):
    pass


class EmptyTestSet(DataError):
    pass


class FormatError(DataError):
    """Malformed or incompatible serialized artifact."""


class NonFiniteActivation(NumericError):
    pass


class CacheMismatch(NumericError):
    """Backward pass invoked with a cache from a different forward call."""
