"""Exception types raised across the package."""


class FracEvolError(Exception):
    """Base class for all package errors."""


class ParamOutOfRange(FracEvolError, ValueError):
    def __init__(self, name, value, constraint):
        self.name = name
        self.value = value
        self.constraint = constraint
        super().__init__(f"parameter {name}={value!r} violates {constraint}")


class EvaluationFailure(FracEvolError):
    pass


class SymbolEvaluationFailure(EvaluationFailure):
    pass


class NoConjugate(FracEvolError):
    pass


class IllConditioned(FracEvolError):
    pass


class AliasingError(FracEvolError):
    pass


class PrimitiveUnavailable(FracEvolError):
    pass


class HistoryTooLong(FracEvolError, IndexError):
    pass


class BadExponent(FracEvolError, ValueError):
    pass


class DimensionMismatch(FracEvolError, ValueError):
    pass


class NewtonDiverged(FracEvolError):
    """Newton failed to reach tolerance; carries the best iterate."""

    def __init__(self, message, best=None, residual=None, step_index=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.step_index = step_index


class SingularJacobian(FracEvolError):
    def __init__(self, message="singular Jacobian; consider raising eps_reg", step_index=None):
        super().__init__(message)
        self.step_index = step_index


class NotAttainable(FracEvolError):
    def __init__(self, message, sup_estimate=None):
        super().__init__(message)
        self.sup_estimate = sup_estimate


class ContractionViolated(FracEvolError):
    pass


class NotSquareIntegrable(FracEvolError):
    pass


class TailNotNegligible(FracEvolError):
    pass


class UnsupportedKernel(FracEvolError):
    pass


class ResolutionInsufficient(FracEvolError):
    pass


class ConfigError(FracEvolError, ValueError):
    pass
