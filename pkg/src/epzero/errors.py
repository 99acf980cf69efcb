"""Exception hierarchy shared by all epzero modules."""


class EpzeroError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(EpzeroError):
    """Invalid grid, parameter block or run configuration.

    ``problems`` holds every violation found, not only the first one.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DomainError(EpzeroError, ValueError):
    """Argument outside the domain where an operator or function is defined."""


class PreconditionError(EpzeroError, ValueError):
    """Input violates a documented precondition (e.g. nonzero mean)."""


class StepRejected(DomainError):
    """A time step left the vacuum-free domain of ``h``.

    ``extremum`` is the smallest value of ``(gamma-1)/2 * eps*m + psi_bar``
    seen during the step.
    """

    def __init__(self, message, extremum):
        self.extremum = float(extremum)
        super().__init__(f"{message} (min of (gamma-1)/2*eps*m + psi_bar = {self.extremum:.6g})")


class AccuracyError(EpzeroError, RuntimeError):
    """Quadrature did not reach its error target within the panel budget."""

    def __init__(self, message, estimate):
        self.estimate = float(estimate)
        super().__init__(f"{message} (achieved relative error estimate {self.estimate:.3g})")


class SolverAbort(EpzeroError, RuntimeError):
    """Time integration stopped: vacuum approach or non-finite values."""

    def __init__(self, message, time):
        self.time = float(time)
        super().__init__(f"{message} at t={self.time:.6g}")
