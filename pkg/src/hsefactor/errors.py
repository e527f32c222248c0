"""Exception hierarchy.

The CLI maps each family onto an exit code: validation problems exit 2,
data problems exit 3, numerical degeneracies exit 4.
"""


class HseError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(HseError, ValueError):
    """Bad configuration or argument values."""

    exit_code = 2


class DataError(HseError, ValueError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 3


class InsufficientDataError(DataError):
    """Too few observations for the requested estimate."""


class NumericalError(HseError, ArithmeticError):
    """A numerically degenerate estimation problem."""

    exit_code = 4


class DegenerateRegressorError(NumericalError):
    """The single regressor of a univariate OLS is (nearly) constant."""


class SingularDesignError(NumericalError):
    """A multivariate design matrix is rank deficient.

    Attributes
    ----------
    columns : tuple of str
        Names of the columns participating in the linear dependency.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)
