"""Exception hierarchy shared by all modules.

Conditions the caller is expected to branch on (an empty channel, an empty
feed) are signalled through return values, not exceptions.
"""


class MicrochannelError(Exception):
    """Base class for every error raised by this package."""


class InvalidRequest(MicrochannelError, ValueError):
    pass


class PreconditionViolation(MicrochannelError, ValueError):
    pass


class CapacityExceeded(MicrochannelError):
    pass


class NumericalFailure(MicrochannelError, ArithmeticError):
    pass


class AssemblyFailure(NumericalFailure):
    """Hamiltonian failed its hermiticity check (usually a broken tensor symmetry)."""


class NormalizationFailure(NumericalFailure):
    pass


class NonConvergence(NumericalFailure):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DependentObservables(NumericalFailure):
    pass
