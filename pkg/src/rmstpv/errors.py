"""Exception types shared across the package."""


class RmstError(Exception):
    """Base class for package errors."""


class InputError(RmstError, ValueError):
    """Malformed or inconsistent user input."""


class ExtrapolationError(InputError):
    """A restriction time lies beyond the observed follow-up."""


class NumericalError(RmstError):
    """A numerical routine failed (singular system, no convergence, ...)."""


class RankDeficientError(NumericalError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(NumericalError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
