"""Exception types shared across the package."""


class DadaError(Exception):
    """Base class for all package errors."""


class DomainError(DadaError, ValueError):
    """Input outside the domain of an operation (non-finite state, bad shape...)."""


class DivergedError(DadaError, ArithmeticError):
    """A simulated trajectory or ensemble member blew up."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"trajectory diverged at step {step}")


class IllConditionedError(DadaError, ArithmeticError):
    """A matrix that must be inverted is singular or numerically not positive definite."""

    def __init__(self, message, cond=float("inf")):
        self.cond = cond
        super().__init__(f"{message} (condition number {cond:.3g})")


class UndefinedProbabilityError(DadaError, ValueError):
    """PN or PS requested where its defining ratio has a zero denominator."""


class ConfigError(DadaError, ValueError):
    """Invalid configuration or input file; maps to CLI exit code 2."""
