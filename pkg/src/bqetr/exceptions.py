"""Exception types raised across the package."""


class ParameterError(ValueError):
    """An argument is outside the domain an operation accepts."""


class ConvergenceError(RuntimeError):
    """A fixed-point iteration stopped before reaching its tolerance.

    ``last_change`` holds the sup-norm change of the final sweep and ``values``
    the last iterate so callers can inspect how far off it was.
    """

    def __init__(self, message, last_change, iterations, values=None):
        super().__init__(message)
        self.last_change = last_change
        self.iterations = iterations
        self.values = values


class DivergenceError(RuntimeError):
    """An optimizer received a non-finite gradient."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    ``errors`` is a list of ``"field: reason"`` strings, one per problem found.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
