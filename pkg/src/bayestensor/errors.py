"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class BayesTensorError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class StructuralError(BayesTensorError, ValueError):
    """Shapes, ranks or indices are inconsistent with each other."""

    exit_code = 2


class ValidationError(BayesTensorError, ValueError):
    """An input violates a documented invariant (for example the l1 gate)."""

    exit_code = 2

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class UnsupportedOperationError(BayesTensorError, TypeError):
    exit_code = 2


class DomainError(BayesTensorError, ValueError):
    """Argument outside the domain where a bound or formula is defined."""

    exit_code = 2


class ConfigurationError(BayesTensorError, ValueError):
    exit_code = 2


class DegenerateProfileError(BayesTensorError, ValueError):
    """Problem profile makes a constant's logarithm non-positive."""

    exit_code = 2


class NumericalError(BayesTensorError, ArithmeticError):
    """A factorization failed even after the jitter retries."""

    exit_code = 3


class EstimationFailure(BayesTensorError, RuntimeError):
    """The chain finished without a single accepted draw."""

    exit_code = 3
