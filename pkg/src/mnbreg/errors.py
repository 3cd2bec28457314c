"""Exception hierarchy shared by the library and the command-line tool."""


class MNBError(Exception):
    """Base class for every error raised by :mod:`mnbreg`."""


class DomainError(MNBError, ValueError):
    """An argument lies outside the domain of a function."""


class NotPositiveDefinite(MNBError, ArithmeticError):
    pass


class ConvergenceFailure(MNBError, ArithmeticError):
    """An iterative routine stopped before meeting its tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NonFiniteMean(MNBError, FloatingPointError):
    """The linear predictor is too large for ``exp`` to stay finite."""


class SingularInformation(ConvergenceFailure):
    pass


class MaxIterationsExceeded(ConvergenceFailure):
    pass


class SchemeInapplicable(MNBError, ValueError):
    pass


class ModelMismatch(MNBError, ValueError):
    pass


class AllReplicationsFailed(MNBError, RuntimeError):
    pass


class ZeroMean(MNBError, ValueError):
    pass


class DataError(MNBError, ValueError):
    """Problem with user supplied data. ``row`` is 1-based, header excluded."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class DataDegenerate(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonIntegerResponse(DataError):
    pass


class NegativeCount(DataError):
    pass


class UnseenLevel(DataError):
    pass


class EmptyCluster(DataError):
    pass
