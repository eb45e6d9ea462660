"""Exception hierarchy shared by the solvers and the experiment runner."""


class MonoflowError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MonoflowError, ValueError):
    """Shapes, domains or argument values are inconsistent."""


class NumericalDomainError(MonoflowError, ArithmeticError):
    """An evaluation produced NaN or Inf."""


class ScheduleInvalidError(MonoflowError, ValueError):
    """A time-rescaling schedule is non-positive where it must be positive."""


class ParameterViolation(MonoflowError, ValueError):
    """One or more admissibility rules are violated.

    ``violations`` holds one human readable message per broken rule.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class IllPosedStepError(MonoflowError, ArithmeticError):
    """The resolvent parameter of a discrete step is not positive."""


class ConvergenceError(MonoflowError, RuntimeError):
    """Newton iteration for a resolvent did not converge."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class DivergenceError(MonoflowError, ArithmeticError):
    """The state became non-finite; ``partial`` holds the finite prefix."""

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class StiffnessError(MonoflowError, RuntimeError):
    """Adaptive step size collapsed or the step budget ran out."""

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class FitDomainError(MonoflowError, ValueError):
    """A rate fit was asked to take the logarithm of non-positive data."""


class UnsupportedMetricError(MonoflowError, ValueError):
    """A metric needs data (e.g. a known solution) that is not available."""
