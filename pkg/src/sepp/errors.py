"""Exception types raised across the package."""


class SeppError(Exception):
    """Base class for model errors (CLI exit code 1)."""


class DomainError(SeppError, ValueError):
    """A point lies outside the spatial domain or every covariate cell."""


class NumericError(SeppError, ArithmeticError):
    """A non-finite or non-positive intermediate value was produced."""

    def __init__(self, message, params=None):
        if params is not None:
            message = f"{message}\nparameters: {params!r}"
        super().__init__(message)
        self.params = params


class SingularDesignError(SeppError, ValueError):
    """Covariate design matrix is rank deficient."""

    def __init__(self, message, collinear=()):
        super().__init__(message)
        self.collinear = tuple(collinear)


class ConvergenceError(SeppError, RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SupercriticalError(SeppError, ValueError):
    """Target-mark productivity >= 1 without an explicit override."""


class SingularCovarianceError(SeppError, ArithmeticError):
    pass


class InputError(ValueError):
    """Malformed input file (CLI exit code 2)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
