"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical nonconvergence with 3 and invariant breaches with 4.
"""


class RegfracError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(RegfracError, ValueError):
    exit_code = 2


class DomainError(RegfracError, ValueError):
    """A point or parameter lies outside the admissible set."""

    exit_code = 2


class DivergenceError(DomainError):
    """Evaluation at a point where the quantity is infinite."""


class SingularityError(DomainError):
    """Kernel evaluated on its diagonal."""


class ShapeError(RegfracError, ValueError):
    exit_code = 2


class UnsupportedError(RegfracError, ValueError):
    exit_code = 2


class NonconvergenceError(RegfracError, RuntimeError):
    exit_code = 3

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class OracleError(NonconvergenceError):
    """A reference quadrature failed to reach its requested accuracy."""


class InvariantBreachError(RegfracError, RuntimeError):
    exit_code = 4


class FitError(RegfracError, ValueError):
    """Rate fit impossible on the requested window (too few nodes or nonpositive data)."""

    exit_code = 2
