"""Exception hierarchy."""


class ProbeMHError(Exception):
    """Base class for all errors raised by probemh."""


class ConfigurationError(ProbeMHError, ValueError):
    """Bad parameters or mismatched dimensions."""


class InvalidStateError(ProbeMHError):
    """A chain state has zero (compensated) density where it must be positive."""


class NumericalError(ProbeMHError, ArithmeticError):
    """A numerical procedure failed; ``residual`` carries the achieved accuracy."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonUniqueStationaryError(NumericalError):
    """The chain is reducible, so its stationary law is not unique."""


class SingularDiffusionError(ProbeMHError, ZeroDivisionError):
    """The diffusion coefficient vanished at ``step``."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DomainError(ProbeMHError, ValueError):
    """Argument outside the domain of an analytic formula or estimator."""


class ConstructionError(ProbeMHError, ValueError):
    """A discrete chain could not be built from its specification."""


class ExternalModelError(ProbeMHError):
    """A child-process model failed or wrote a malformed line (``line`` is 1-based)."""

    def __init__(self, detail, line=None):
        super().__init__(detail, line)
        self.detail = detail
        self.line = line

    def __str__(self):
        return self.detail if self.line is None else f"line {self.line}: {self.detail}"
