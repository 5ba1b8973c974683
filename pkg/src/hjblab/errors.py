"""Exception hierarchy shared by every module.

Exit-code mapping used by the CLI: InvalidInput -> 1, numerical family
(AccuracyError, NumericalError, DegeneracyError, EvalError, NonConvergence)
-> 2, SuiteFailure -> 3.
"""


class LabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(LabError):
    """Input violates a documented precondition or invariant."""


class InternalError(LabError):
    """A cross-check that should be impossible to fail has failed."""


class AccuracyError(LabError):
    """A quadrature error estimate exceeded its tolerance."""


class NumericalError(LabError):
    """A numerical process blew up or lost a structural property."""


class DegeneracyError(NumericalError):
    """Particle weights collapsed (effective sample size below 2)."""


class EvalError(LabError):
    """A functional evaluation returned a non-finite value."""


class NonConvergence(LabError):
    """No optimizer restart reached the stationarity tolerance.

    Carries the best-effort result in ``self.result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SuiteFailure(LabError):
    """An inequality suite found a violated display.

    Carries the offending rows in ``self.violations``.
    """

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or []
