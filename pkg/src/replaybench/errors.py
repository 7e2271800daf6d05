"""Exception and warning types raised across the package."""


class ReplayBenchError(Exception):
    pass


class ShapeError(ReplayBenchError, ValueError):
    pass


class NumericError(ReplayBenchError, ArithmeticError):
    pass


class FormatError(ReplayBenchError, ValueError):
    """Malformed dataset file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyBufferError(ReplayBenchError, LookupError):
    pass


class UnsupportedArchitecture(ReplayBenchError, ValueError):
    pass


class PlanError(ReplayBenchError, ValueError):
    pass


class EmptyBatchWarning(UserWarning):
    pass
