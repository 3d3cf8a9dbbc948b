"""Exception hierarchy shared across the package."""


class SeisDiagError(Exception):
    """Base class for all package errors."""


class ValidationError(SeisDiagError, ValueError):
    """Input failed a precondition or schema check (CLI exit code 2)."""


class NumericalError(SeisDiagError, ArithmeticError):
    """A numerical procedure failed (CLI exit code 3)."""


# signals
class InvalidSignal(ValidationError):
    pass


class ChannelMismatch(ValidationError):
    pass


class DegenerateDenominator(NumericalError):
    pass


# svm
class DimensionError(ValidationError):
    pass


class InvalidInput(ValidationError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(ValidationError):
    pass


# costs
class ClassError(ValidationError):
    pass


class EmptyReport(ValidationError):
    pass


# tuner
class InsufficientData(ValidationError):
    pass


# simulator
class IntegrationFailure(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


# diagnose
class DegenerateDataset(ValidationError):
    pass
